#pragma once

#include "rcvqa/error.hpp"
#include "rcvqa/rng.hpp"
#include "rcvqa/tensor.hpp"
#include "rcvqa/ops.hpp"
#include "rcvqa/gradcheck.hpp"
#include "rcvqa/text.hpp"
#include "rcvqa/dataset.hpp"
#include "rcvqa/vocab.hpp"
#include "rcvqa/params.hpp"
#include "rcvqa/embedding.hpp"
#include "rcvqa/glove.hpp"
#include "rcvqa/encoder.hpp"
#include "rcvqa/cq_attention.hpp"
#include "rcvqa/heads.hpp"
#include "rcvqa/retrieval.hpp"
#include "rcvqa/model.hpp"
#include "rcvqa/optim.hpp"
#include "rcvqa/checkpoint.hpp"
#include "rcvqa/pipeline.hpp"
#include "rcvqa/evaluate.hpp"
#include "rcvqa/train.hpp"
