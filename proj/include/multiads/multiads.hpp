#pragma once

#include "multiads/adapter.hpp"
#include "multiads/binary_io.hpp"
#include "multiads/config.hpp"
#include "multiads/dataio.hpp"
#include "multiads/embedding_files.hpp"
#include "multiads/encoder.hpp"
#include "multiads/error.hpp"
#include "multiads/fewshot.hpp"
#include "multiads/infer.hpp"
#include "multiads/kba.hpp"
#include "multiads/loss.hpp"
#include "multiads/metrics.hpp"
#include "multiads/pipeline.hpp"
#include "multiads/prompts.hpp"
#include "multiads/rng.hpp"
#include "multiads/tensor.hpp"
#include "multiads/train.hpp"
#include "multiads/upsample.hpp"
