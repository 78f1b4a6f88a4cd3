#include "dsanet/conv4d.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "dsanet/rng.hpp"

namespace dsanet {

void Kernel4D::validate() const {
  require(values.rank() == 6,
          "Kernel4D: expected (Cout,Cin,Lu,Lt,Lh,Lw), got " +
              shape_str(values.shape()));
  for (std::size_t a = 2; a < 6; ++a) {
    require(values.shape()[a] % 2 == 1,
            "Kernel4D: sliding extents must be odd, got " +
                shape_str(values.shape()));
  }
}

Tensor conv4d(const Tensor& video, const Kernel4D& kernel) {
  require(video.rank() == 6, "conv4d: video must be (N,C,U,T,H,W), got " +
                                 shape_str(video.shape()));
  kernel.validate();
  const Tensor& k = kernel.values;
  require(k.extent(1) == video.extent(kAxisC),
          "conv4d: kernel expects Cin=" + std::to_string(k.extent(1)) +
              ", video has C=" + std::to_string(video.extent(kAxisC)));

  const std::size_t n_ext = video.extent(kAxisN);
  const std::size_t c_in = video.extent(kAxisC);
  const std::size_t u_ext = video.extent(kAxisU);
  const std::size_t t_ext = video.extent(kAxisT);
  const std::size_t h_ext = video.extent(kAxisH);
  const std::size_t w_ext = video.extent(kAxisW);
  const std::size_t c_out = k.extent(0);
  const std::size_t lu = k.extent(2), lt = k.extent(3), lh = k.extent(4),
                    lw = k.extent(5);
  const std::ptrdiff_t ou = (lu - 1) / 2, ot = (lt - 1) / 2, oh = (lh - 1) / 2,
                       ow = (lw - 1) / 2;

  auto inside = [](std::ptrdiff_t i, std::size_t extent) {
    return i >= 0 && i < static_cast<std::ptrdiff_t>(extent);
  };

  Tensor out = Tensor::zeros({n_ext, c_out, u_ext, t_ext, h_ext, w_ext});
  for (std::size_t n = 0; n < n_ext; ++n)
    for (std::size_t co = 0; co < c_out; ++co)
      for (std::size_t u = 0; u < u_ext; ++u)
        for (std::size_t t = 0; t < t_ext; ++t)
          for (std::size_t h = 0; h < h_ext; ++h)
            for (std::size_t w = 0; w < w_ext; ++w) {
              double acc = 0.0;
              for (std::size_t c = 0; c < c_in; ++c)
                for (std::size_t l = 0; l < lu; ++l)
                  for (std::size_t kk = 0; kk < lt; ++kk)
                    for (std::size_t i = 0; i < lh; ++i)
                      for (std::size_t j = 0; j < lw; ++j) {
                        const std::ptrdiff_t vu =
                            static_cast<std::ptrdiff_t>(u) +
                            (static_cast<std::ptrdiff_t>(l) - ou);
                        const std::ptrdiff_t vt =
                            static_cast<std::ptrdiff_t>(t) +
                            (static_cast<std::ptrdiff_t>(kk) - ot);
                        const std::ptrdiff_t vh =
                            static_cast<std::ptrdiff_t>(h) +
                            (static_cast<std::ptrdiff_t>(i) - oh);
                        const std::ptrdiff_t vw =
                            static_cast<std::ptrdiff_t>(w) +
                            (static_cast<std::ptrdiff_t>(j) - ow);
                        if (!inside(vu, u_ext) || !inside(vt, t_ext) ||
                            !inside(vh, h_ext) || !inside(vw, w_ext)) {
                          continue;  // zero padding
                        }
                        acc += k(co, c, l, kk, i, j) *
                               video(n, c, static_cast<std::size_t>(vu),
                                     static_cast<std::size_t>(vt),
                                     static_cast<std::size_t>(vh),
                                     static_cast<std::size_t>(vw));
                      }
              out(n, co, u, t, h, w) = acc;
            }
  return out;
}

Kernel4D embed_dsa_kernel(const DynamicKernel& kernel, std::size_t channels) {
  const Tensor& k = kernel.values;
  require(k.rank() == 3 && k.extent(0) == 1,
          "embed_dsa_kernel: expected one batch entry (1,C,L), got " +
              shape_str(k.shape()));
  require(k.extent(1) == channels,
          "embed_dsa_kernel: kernel has " + std::to_string(k.extent(1)) +
              " rows, expected " + std::to_string(channels));
  const std::size_t l = k.extent(2);

  Kernel4D out{Tensor::zeros({channels, channels, l, 1, 1, 1})};
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t tap = 0; tap < l; ++tap) {
      out.values(c, c, tap, 0, 0, 0) = k(0, c, tap);
    }
  }
  return out;
}

namespace {

double sweep_cell(const Shape& shape, std::size_t kernel_size,
                  std::uint64_t cell_seed) {
  Rng rng(cell_seed);
  Tensor video = Tensor::zeros(shape);
  for (std::size_t i = 0; i < video.size(); ++i) {
    video[i] = rng.uniform(-1.0, 1.0);
  }
  const std::size_t channels = shape[kAxisC];
  DynamicKernel kernel{Tensor::zeros({1, channels, kernel_size})};
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t l = 0; l < kernel_size; ++l) {
      kernel.values(0, c, l) = rng.uniform(0.1, 1.0);
      sum += kernel.values(0, c, l);
    }
    for (std::size_t l = 0; l < kernel_size; ++l) kernel.values(0, c, l) /= sum;
  }

  Tensor direct = segment_conv(video, kernel);
  Tensor reference = conv4d(video, embed_dsa_kernel(kernel, channels));
  double worst = 0.0;
  for (std::size_t i = 0; i < direct.size(); ++i) {
    worst = std::max(worst, std::abs(direct[i] - reference[i]));
  }
  return worst;
}

}  // namespace

OracleSweepResult oracle_sweep(const OracleSweepOptions& options) {
  require(options.kernel_size % 2 == 1, "oracle_sweep: kernel size must be odd");
  require(options.seeds >= 1 && options.max_extent >= 1,
          "oracle_sweep: empty sweep");

  struct Cell {
    Shape shape;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  const auto cap = [&](std::size_t v) { return std::min(v, options.max_extent); };
  for (std::size_t c = 1; c <= cap(3); ++c)
    for (std::size_t u = 2; u <= cap(4); ++u)
      for (std::size_t t = 1; t <= cap(2); ++t)
        for (std::size_t h = 1; h <= cap(2); ++h)
          for (std::size_t w = 1; w <= cap(2); ++w)
            for (std::size_t s = 0; s < options.seeds; ++s) {
              Cell cell;
              cell.shape = {1, c, u, t, h, w};
              cell.seed = derive_seed(options.seed, cells.size());
              cells.push_back(std::move(cell));
            }
  require(!cells.empty(), "oracle_sweep: grid is empty (max_extent too small)");

  std::vector<double> deviations(cells.size(), 0.0);
  auto run_range = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < cells.size(); i += step) {
      deviations[i] =
          sweep_cell(cells[i].shape, options.kernel_size, cells[i].seed);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  if (jobs == 1) {
    run_range(0, 1);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) workers.emplace_back(run_range, w, jobs);
    for (std::thread& t : workers) t.join();
  }

  OracleSweepResult result;
  result.cells = cells.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (deviations[i] >= result.max_deviation) {
      result.max_deviation = deviations[i];
      result.worst_shape = cells[i].shape;
      result.worst_seed = cells[i].seed;
    }
  }
  return result;
}

}  // namespace dsanet
