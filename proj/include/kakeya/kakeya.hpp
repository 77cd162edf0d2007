#pragma once

#include "kakeya/geometry.hpp"
#include "kakeya/rng.hpp"
#include "kakeya/voxel.hpp"
#include "kakeya/shading.hpp"
#include "kakeya/axioms.hpp"
#include "kakeya/assouad.hpp"
#include "kakeya/prism_lab.hpp"
#include "kakeya/projection.hpp"
#include "kakeya/generators.hpp"
#include "kakeya/cli.hpp"
