#pragma once

#include <gnerf/data/dataset.hpp>
#include <gnerf/eval/diagnostics.hpp>
#include <gnerf/eval/evaluate.hpp>
#include <gnerf/field/evaluator.hpp>
#include <gnerf/field/point_ops.hpp>
#include <gnerf/train/latent.hpp>
#include <gnerf/train/trainer.hpp>
