#include "sinkclust/cli.hpp"

int main(int argc, char** argv)
{
    return sinkclust::run_cli(argc, argv);
}
