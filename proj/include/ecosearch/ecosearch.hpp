#pragma once

#include "ecosearch/analysis.hpp"
#include "ecosearch/analysis_io.hpp"
#include "ecosearch/catalog.hpp"
#include "ecosearch/csv.hpp"
#include "ecosearch/date.hpp"
#include "ecosearch/embedding_store.hpp"
#include "ecosearch/encoder.hpp"
#include "ecosearch/error.hpp"
#include "ecosearch/ivf_index.hpp"
#include "ecosearch/kmeans.hpp"
#include "ecosearch/metadata_index.hpp"
#include "ecosearch/search_service.hpp"
#include "ecosearch/session.hpp"
