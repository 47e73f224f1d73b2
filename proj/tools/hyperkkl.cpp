#include "hyperkkl/app.hpp"

int main(int argc, char** argv) { return hyperkkl::app::run_cli(argc, argv); }
