#ifndef FLATVI_FLATVI_HPP_
#define FLATVI_FLATVI_HPP_

#include "assignment.hpp"
#include "autodiff.hpp"
#include "core.hpp"
#include "datagen.hpp"
#include "fisher.hpp"
#include "gae.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "nb_vae.hpp"
#include "nn.hpp"
#include "otcfm.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "taped_mlp.hpp"

#endif  // FLATVI_FLATVI_HPP_
