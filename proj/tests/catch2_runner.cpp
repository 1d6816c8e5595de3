// Compiles the amalgamated Catch2 implementation (with its default
// main) once; every unit-test target links against this.
#include <catch2/catch_amalgamated.cpp>
