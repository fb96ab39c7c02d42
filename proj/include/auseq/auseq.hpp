#pragma once

#include "auseq/core.hpp"
#include "auseq/evaluation.hpp"
#include "auseq/ingest.hpp"
#include "auseq/model.hpp"
#include "auseq/preprocess.hpp"
#include "auseq/random.hpp"
#include "auseq/training.hpp"
