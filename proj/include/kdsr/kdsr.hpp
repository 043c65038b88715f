// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "kdsr/error.hpp"
#include "kdsr/rng.hpp"
#include "kdsr/numerics/dense_matrix.hpp"
#include "kdsr/numerics/functions.hpp"
#include "kdsr/numerics/parameter.hpp"
#include "kdsr/numerics/parallel.hpp"
#include "kdsr/numerics/tape.hpp"
#include "kdsr/numerics/binding.hpp"
#include "kdsr/numerics/grad_check.hpp"
#include "kdsr/corpus/dataset.hpp"
#include "kdsr/corpus/modality.hpp"
#include "kdsr/corpus/synthetic.hpp"
#include "kdsr/teacher/scoring.hpp"
#include "kdsr/teacher/autoencoder.hpp"
#include "kdsr/teacher/codebook.hpp"
#include "kdsr/teacher/signals.hpp"
#include "kdsr/student/heads.hpp"
#include "kdsr/backbone/gru.hpp"
#include "kdsr/backbone/readout.hpp"
#include "kdsr/backbone/attention.hpp"
#include "kdsr/backbone/network.hpp"
#include "kdsr/eval/metrics.hpp"
#include "kdsr/eval/drift.hpp"
#include "kdsr/eval/report.hpp"
#include "kdsr/trainer/config.hpp"
#include "kdsr/trainer/model.hpp"
#include "kdsr/trainer/trainer.hpp"
#include "kdsr/trainer/checkpoint.hpp"
#include "kdsr/cli/run_config.hpp"
#include "kdsr/cli/commands.hpp"
#include "kdsr/cli/app.hpp"
