#pragma once

#include "velm/dataset.hpp"
#include "velm/digest.hpp"
#include "velm/error.hpp"
#include "velm/harness.hpp"
#include "velm/image.hpp"
#include "velm/json.hpp"
#include "velm/llm_gateway.hpp"
#include "velm/metrics.hpp"
#include "velm/prompting.hpp"
#include "velm/rng.hpp"
#include "velm/synthetic.hpp"
#include "velm/vision_expert.hpp"
#include "velm/visual_prompt.hpp"
