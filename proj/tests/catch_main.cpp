// Catch2 amalgamated implementation, compiled once for the test binary.
#include <catch2/catch_amalgamated.cpp>
