#pragma once

#include "bvae/baselines/adapters.hpp"
#include "bvae/baselines/ica.hpp"
#include "bvae/baselines/projection.hpp"
#include "bvae/core/errors.hpp"
#include "bvae/core/matrix.hpp"
#include "bvae/core/optimizer.hpp"
#include "bvae/core/rng.hpp"
#include "bvae/core/stats.hpp"
#include "bvae/core/tape.hpp"
#include "bvae/data/amoeba.hpp"
#include "bvae/data/dataset.hpp"
#include "bvae/data/factor_grid.hpp"
#include "bvae/data/image.hpp"
#include "bvae/data/shapes.hpp"
#include "bvae/io/binary.hpp"
#include "bvae/io/dataset_io.hpp"
#include "bvae/io/tensor_file.hpp"
#include "bvae/io/text.hpp"
#include "bvae/metric/classifier.hpp"
#include "bvae/metric/factor_change.hpp"
#include "bvae/metric/replica.hpp"
#include "bvae/model/analysis.hpp"
#include "bvae/model/checkpoint.hpp"
#include "bvae/model/training.hpp"
#include "bvae/model/vae.hpp"
#include "bvae/zeroshot/holdout.hpp"
#include "bvae/zeroshot/splice.hpp"
