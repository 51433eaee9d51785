#pragma once

#include "tedrec/adam.hpp"
#include "tedrec/bench.hpp"
#include "tedrec/config.hpp"
#include "tedrec/data.hpp"
#include "tedrec/encoder.hpp"
#include "tedrec/error.hpp"
#include "tedrec/eval.hpp"
#include "tedrec/fusion.hpp"
#include "tedrec/gradcheck.hpp"
#include "tedrec/loss.hpp"
#include "tedrec/model.hpp"
#include "tedrec/params.hpp"
#include "tedrec/pipeline.hpp"
#include "tedrec/spectral.hpp"
#include "tedrec/synthetic.hpp"
#include "tedrec/tensor.hpp"
#include "tedrec/train.hpp"
#include "tedrec/verify.hpp"
