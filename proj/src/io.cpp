#include "bc/types.hpp"
