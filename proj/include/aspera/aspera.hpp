// Copyright 2026 AspeRa Contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "aspera/abae.hpp"
#include "aspera/adam.hpp"
#include "aspera/config.hpp"
#include "aspera/corpus.hpp"
#include "aspera/embeddings.hpp"
#include "aspera/eval.hpp"
#include "aspera/gradcheck.hpp"
#include "aspera/io.hpp"
#include "aspera/model.hpp"
#include "aspera/rng.hpp"
#include "aspera/tape.hpp"
#include "aspera/tensor.hpp"
