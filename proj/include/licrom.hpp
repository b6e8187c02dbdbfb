#pragma once

#include "licrom/basis.hpp"
#include "licrom/checkpoint.hpp"
#include "licrom/dataset.hpp"
#include "licrom/full_sim.hpp"
#include "licrom/material.hpp"
#include "licrom/mesh.hpp"
#include "licrom/mesh_io.hpp"
#include "licrom/mesh_ops.hpp"
#include "licrom/networks.hpp"
#include "licrom/reduced_sim.hpp"
#include "licrom/scenario.hpp"
#include "licrom/service.hpp"
#include "licrom/trainer.hpp"
