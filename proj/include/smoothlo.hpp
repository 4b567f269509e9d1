#pragma once

#include "smoothlo/config.hpp"
#include "smoothlo/evaluation.hpp"
#include "smoothlo/factors.hpp"
#include "smoothlo/features.hpp"
#include "smoothlo/geometry.hpp"
#include "smoothlo/graph.hpp"
#include "smoothlo/io.hpp"
#include "smoothlo/kdtree.hpp"
#include "smoothlo/map.hpp"
#include "smoothlo/odometry.hpp"
#include "smoothlo/scan.hpp"
#include "smoothlo/sim.hpp"
