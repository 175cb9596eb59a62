#pragma once

#include "ragenergy/analysis.hpp"
#include "ragenergy/csv.hpp"
#include "ragenergy/dataset.hpp"
#include "ragenergy/drivers.hpp"
#include "ragenergy/error.hpp"
#include "ragenergy/experiment.hpp"
#include "ragenergy/grounding.hpp"
#include "ragenergy/llm_client.hpp"
#include "ragenergy/measurement.hpp"
#include "ragenergy/pipeline.hpp"
#include "ragenergy/power_model.hpp"
#include "ragenergy/vector_store.hpp"
