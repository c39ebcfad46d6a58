#pragma once

#include "latent_scan/errors.hpp"
#include "latent_scan/ita.hpp"
#include "latent_scan/metrics.hpp"
#include "latent_scan/odin.hpp"
#include "latent_scan/parallel.hpp"
#include "latent_scan/pipeline.hpp"
#include "latent_scan/png_io.hpp"
#include "latent_scan/scan.hpp"
#include "latent_scan/tables.hpp"
#include "latent_scan/tensor_io.hpp"
