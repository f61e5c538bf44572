#include "doctest.h"

TEST_SUITE_BEGIN("corpus");
TEST_SUITE_END();
