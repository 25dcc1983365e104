#pragma once

#include "clonebench/archive.hpp"
#include "clonebench/checkpoint.hpp"
#include "clonebench/core.hpp"
#include "clonebench/crc32.hpp"
#include "clonebench/envsim.hpp"
#include "clonebench/eval.hpp"
#include "clonebench/gemm.hpp"
#include "clonebench/gradcheck.hpp"
#include "clonebench/netio.hpp"
#include "clonebench/nn.hpp"
#include "clonebench/parallel.hpp"
#include "clonebench/policy.hpp"
#include "clonebench/preprocess.hpp"
#include "clonebench/prng.hpp"
#include "clonebench/protocol.hpp"
#include "clonebench/session.hpp"
#include "clonebench/trainer.hpp"
