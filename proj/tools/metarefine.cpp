#include "metarefine/cli/commands.hpp"

int main(int argc, char** argv) { return metarefine::cli::run(argc, argv); }
