#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "voplab/tensor/allocator.hpp"

int main(int argc, char** argv) {
    voplab::configure_allocator();
    return doctest::Context(argc, argv).run();
}
