#pragma once

#include "dual3d/analytic_sdf.hpp"
#include "dual3d/camera.hpp"
#include "dual3d/common.hpp"
#include "dual3d/diffusion.hpp"
#include "dual3d/dual_mode_net.hpp"
#include "dual3d/field.hpp"
#include "dual3d/field_io.hpp"
#include "dual3d/image_io.hpp"
#include "dual3d/mesh.hpp"
#include "dual3d/metrics.hpp"
#include "dual3d/pipeline.hpp"
#include "dual3d/raster.hpp"
#include "dual3d/refine.hpp"
#include "dual3d/regularizers.hpp"
#include "dual3d/renderer.hpp"
