#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "tedio/tensor.hpp"

int main(int argc, char** argv) {
    tedio::set_finite_checks(true);
    doctest::Context ctx;
    ctx.applyCommandLine(argc, argv);
    return ctx.run();
}
