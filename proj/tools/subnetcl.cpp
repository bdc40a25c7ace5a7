#include "subnetcl/report.hpp"

int main(int argc, char** argv) { return subnetcl::run_cli(argc, argv); }
