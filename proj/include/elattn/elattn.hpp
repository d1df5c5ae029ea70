#pragma once

#include "elattn/attention.hpp"
#include "elattn/checkpoint.hpp"
#include "elattn/decoding.hpp"
#include "elattn/errors.hpp"
#include "elattn/model.hpp"
#include "elattn/perf.hpp"
#include "elattn/report.hpp"
#include "elattn/tensor.hpp"
