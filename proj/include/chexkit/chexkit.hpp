#pragma once

// Convenience umbrella for the whole library.

#include "chexkit/boxes.hpp"
#include "chexkit/csv.hpp"
#include "chexkit/error.hpp"
#include "chexkit/fixtures.hpp"
#include "chexkit/head.hpp"
#include "chexkit/image.hpp"
#include "chexkit/io.hpp"
#include "chexkit/labels.hpp"
#include "chexkit/metrics.hpp"
#include "chexkit/pipeline.hpp"
#include "chexkit/png_io.hpp"
#include "chexkit/rng.hpp"
