#pragma once

#include "cner/char_lm.hpp"
#include "cner/config.hpp"
#include "cner/container.hpp"
#include "cner/corpus_stats.hpp"
#include "cner/crf.hpp"
#include "cner/embeddings.hpp"
#include "cner/eval.hpp"
#include "cner/grad_check.hpp"
#include "cner/layers.hpp"
#include "cner/optim.hpp"
#include "cner/rng.hpp"
#include "cner/tagger.hpp"
#include "cner/tensor.hpp"
#include "cner/text_corpus.hpp"
#include "cner/utf8.hpp"
#include "cner/word_lm.hpp"
