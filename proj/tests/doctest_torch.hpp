#pragma once

// c10 logging defines a fatal CHECK(cond); the doctest assertion has to win.
#include <torch/torch.h>
#undef CHECK

#include <doctest.h>
