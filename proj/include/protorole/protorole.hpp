#pragma once

#include "protorole/corpus.hpp"
#include "protorole/crf.hpp"
#include "protorole/errors.hpp"
#include "protorole/evalharness.hpp"
#include "protorole/linkers.hpp"
#include "protorole/optim.hpp"
#include "protorole/ordlogit.hpp"
#include "protorole/sprolim.hpp"
