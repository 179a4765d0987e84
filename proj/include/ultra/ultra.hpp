#pragma once

// Umbrella header for the ultradiff library: leveled trees and their
// boundaries, hierarchical Laplacians and heat semigroups, spherical
// transforms, random-walk boundary theory, and convergence drivers.

#include "ultra/boundary.hpp"
#include "ultra/common.hpp"
#include "ultra/config.hpp"
#include "ultra/converge.hpp"
#include "ultra/function.hpp"
#include "ultra/group.hpp"
#include "ultra/io.hpp"
#include "ultra/laplacian.hpp"
#include "ultra/linalg.hpp"
#include "ultra/rng.hpp"
#include "ultra/spherical.hpp"
#include "ultra/tree.hpp"
#include "ultra/walk.hpp"
