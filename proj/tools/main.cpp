#include "diffq/cli/app.hpp"

int main(int argc, char** argv)
{
    return diffq::cli::dispatch(argc, argv);
}
