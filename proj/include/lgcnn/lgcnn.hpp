#pragma once

#include "lgcnn/data.hpp"
#include "lgcnn/error.hpp"
#include "lgcnn/layers.hpp"
#include "lgcnn/model_spec.hpp"
#include "lgcnn/network.hpp"
#include "lgcnn/presets.hpp"
#include "lgcnn/report.hpp"
#include "lgcnn/tensor.hpp"
#include "lgcnn/training.hpp"
