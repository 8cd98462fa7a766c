#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "enclab/graph.hpp"

int main(int argc, char** argv) {
    enclab::init_runtime(argc, argv);
    return doctest::Context(argc, argv).run();
}
