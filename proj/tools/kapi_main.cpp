#include "kapi/harness.hpp"

int main(int argc, char** argv) { return kapi::cli_main(argc, argv); }
