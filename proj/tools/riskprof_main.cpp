#include "riskprof/pipeline.hpp"

int main(int argc, char** argv) { return riskprof::cli_main(argc, argv); }
