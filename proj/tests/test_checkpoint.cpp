#include "doctest.h"

TEST_SUITE_BEGIN("checkpoint");
TEST_SUITE_END();
