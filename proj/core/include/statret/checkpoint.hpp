#pragma once

#include <string>
#include <vector>

#include "statret/params.hpp"
#include "statret/tensor.hpp"

namespace statret {

/// Writes every parameter in registration order: name, shape, fp64 data.
/// The byte stream is a pure function of the store contents, so identical
/// stores always produce identical files.
void save_checkpoint(const std::string& path, const ParamStore& store);

/// Restores values into an existing store. Parameter names, order and
/// shapes must match the file exactly; gradients are zeroed.
void load_checkpoint(const std::string& path, ParamStore& store);

/// Parameter names stored in a checkpoint, in file order.
std::vector<std::string> checkpoint_names(const std::string& path);

/// Retrieval index on disk: ids give the row order of the matrix.
struct ArticleMatrixFile {
    std::vector<std::string> ids;
    Tensor vectors;  // {ids.size(), dim}
};

void save_article_matrix(const std::string& path, const std::vector<std::string>& ids,
                         const Tensor& vectors);
ArticleMatrixFile load_article_matrix(const std::string& path);

}  // namespace statret
