// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "exclaim/corpus.hpp"
#include "exclaim/embeddings.hpp"
#include "exclaim/entity_typing.hpp"
#include "exclaim/error.hpp"
#include "exclaim/evaluation.hpp"
#include "exclaim/model.hpp"
#include "exclaim/synthgen.hpp"
#include "exclaim/training.hpp"
