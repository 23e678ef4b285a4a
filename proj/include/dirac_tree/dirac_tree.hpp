#pragma once

#include "edge_solver.hpp"
#include "fd_oracle.hpp"
#include "graph.hpp"
#include "inverse_edge.hpp"
#include "io.hpp"
#include "leaf_peeling.hpp"
#include "signal.hpp"
#include "tree_forward.hpp"
