#include "doctest.h"

TEST_SUITE_BEGIN("stitch");
TEST_SUITE_END();
