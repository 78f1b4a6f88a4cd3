#include "dsanet/cost_model.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#ifndef DSANET_DATA_DIR
#define DSANET_DATA_DIR "."
#endif

namespace dsanet {

void ArchSpec::validate() const {
  require(!stages.empty(), "ArchSpec: no stages");
  require(conv1_out >= 1 && classes >= 1, "ArchSpec: bad widths");
  for (const StageSpec& s : stages) {
    require(s.blocks >= 1, "ArchSpec: stage " + s.name + " has no blocks");
    require(s.out_channels >= 1 && s.mid_channels >= 1,
            "ArchSpec: stage " + s.name + " has zero widths");
    require(s.spatial_stride >= 1, "ArchSpec: stage " + s.name + " stride");
  }
}

ArchSpec load_arch(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("load_arch: cannot open " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_arch: " + path.string() + ": " + e.what());
  }

  ArchSpec a;
  a.name = j.at("name").get<std::string>();
  const std::string block = j.at("block").get<std::string>();
  if (block == "bottleneck") {
    a.block_type = ResBlockType::kBottleneck;
  } else if (block == "basic") {
    a.block_type = ResBlockType::kBasic;
  } else {
    throw std::runtime_error("load_arch: unknown block type '" + block + "'");
  }
  const auto& input = j.at("input");
  a.input_spatial = input.at("spatial").get<std::size_t>();
  a.raw_frames = input.at("raw_frames").get<std::size_t>();
  a.data_temporal_stride = input.at("data_temporal_stride").get<std::size_t>();
  const auto& conv1 = j.at("conv1");
  a.conv1_kt = conv1.at("kt").get<std::size_t>();
  a.conv1_k = conv1.at("k").get<std::size_t>();
  a.conv1_out = conv1.at("out_channels").get<std::size_t>();
  a.conv1_stride = conv1.at("spatial_stride").get<std::size_t>();
  const auto& pool1 = j.at("pool1");
  a.pool1_k = pool1.at("k").get<std::size_t>();
  a.pool1_stride = pool1.at("spatial_stride").get<std::size_t>();
  for (const auto& js : j.at("stages")) {
    StageSpec s;
    s.name = js.at("name").get<std::string>();
    s.blocks = js.at("blocks").get<std::size_t>();
    s.mid_channels = js.at("mid_channels").get<std::size_t>();
    s.out_channels = js.at("out_channels").get<std::size_t>();
    s.temporal_kernel = js.at("temporal_kernel").get<bool>();
    s.spatial_stride = js.at("spatial_stride").get<std::size_t>();
    s.output_spatial = js.at("output_spatial").get<std::size_t>();
    a.stages.push_back(std::move(s));
  }
  a.classes = j.at("classes").get<std::size_t>();
  a.validate();
  return a;
}

void save_arch(const ArchSpec& arch, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["name"] = arch.name;
  j["block"] =
      arch.block_type == ResBlockType::kBottleneck ? "bottleneck" : "basic";
  j["input"] = {{"spatial", arch.input_spatial},
                {"raw_frames", arch.raw_frames},
                {"data_temporal_stride", arch.data_temporal_stride}};
  j["conv1"] = {{"kt", arch.conv1_kt},
                {"k", arch.conv1_k},
                {"out_channels", arch.conv1_out},
                {"spatial_stride", arch.conv1_stride}};
  j["pool1"] = {{"k", arch.pool1_k}, {"spatial_stride", arch.pool1_stride}};
  j["stages"] = nlohmann::ordered_json::array();
  for (const StageSpec& s : arch.stages) {
    j["stages"].push_back({{"name", s.name},
                           {"blocks", s.blocks},
                           {"mid_channels", s.mid_channels},
                           {"out_channels", s.out_channels},
                           {"temporal_kernel", s.temporal_kernel},
                           {"spatial_stride", s.spatial_stride},
                           {"output_spatial", s.output_spatial}});
  }
  j["classes"] = arch.classes;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_arch: cannot open " + path.string());
  os << j.dump(2) << "\n";
}

std::filesystem::path builtin_arch_dir() { return DSANET_DATA_DIR; }

namespace {

std::size_t strided_out(std::size_t in, std::size_t k, std::size_t stride,
                        const std::string& what) {
  const std::size_t pad = (k - 1) / 2;
  require(in + 2 * pad >= k, what + ": kernel " + std::to_string(k) +
                                 " larger than padded input " +
                                 std::to_string(in));
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

LayerCost layer_cost(const ConvLayer& layer, std::size_t frames,
                     std::size_t spatial) {
  require(layer.cin >= 1 && layer.cout >= 1, "layer_cost: zero widths");
  const std::size_t out_t =
      strided_out(frames, layer.kt, layer.stride_t, "layer " + layer.name);
  const std::size_t out_s =
      strided_out(spatial, layer.kh, layer.stride_s, "layer " + layer.name);
  LayerCost c;
  const unsigned long long kvol = static_cast<unsigned long long>(layer.kt) *
                                  layer.kh * layer.kw;
  c.macs = static_cast<unsigned long long>(layer.cout) * layer.cin * kvol *
           out_t * out_s * out_s;
  c.params = static_cast<unsigned long long>(layer.cout) * layer.cin * kvol;
  if (layer.bias) c.params += layer.cout;
  if (layer.batch_norm) c.params += 2ull * layer.cout;
  return c;
}

unsigned long long CostReport::total_macs() const {
  unsigned long long t = 0;
  for (const CostItem& i : items) t += i.macs;
  return t;
}

unsigned long long CostReport::conv_macs() const {
  unsigned long long t = 0;
  for (const CostItem& i : items) {
    if (i.kind == "conv") t += i.macs;
  }
  return t;
}

unsigned long long CostReport::classifier_macs() const {
  unsigned long long t = 0;
  for (const CostItem& i : items) {
    if (i.kind == "fc") t += i.macs;
  }
  return t;
}

unsigned long long CostReport::total_params() const {
  unsigned long long t = 0;
  for (const CostItem& i : items) t += i.params;
  return t;
}

CostReport arch_cost(const ArchSpec& arch, std::size_t frames,
                     std::size_t resolution, std::size_t snippets,
                     std::size_t classes) {
  arch.validate();
  require(frames >= 1 && resolution >= 1 && snippets >= 1,
          "arch_cost: bad input description");
  if (classes == 0) classes = arch.classes;

  CostReport report;
  report.arch = arch.name;
  report.frames = frames;
  report.resolution = resolution;
  report.snippets = snippets;
  report.classes = classes;
  const unsigned long long u = snippets;

  std::size_t spatial = resolution;
  std::size_t t = frames;

  ConvLayer conv1{"conv1", arch.conv1_kt, arch.conv1_k, arch.conv1_k,
                  3,       arch.conv1_out, 1,           arch.conv1_stride,
                  true,    false};
  LayerCost c1 = layer_cost(conv1, t, spatial);
  spatial = strided_out(spatial, arch.conv1_k, arch.conv1_stride, "conv1");
  report.items.push_back({"conv1", "conv", c1.macs * u, c1.params});

  spatial = strided_out(spatial, arch.pool1_k, arch.pool1_stride, "pool1");
  report.items.push_back({"pool1", "pool", 0, 0});

  std::size_t in_c = arch.conv1_out;
  for (const StageSpec& stage : arch.stages) {
    for (std::size_t b = 0; b < stage.blocks; ++b) {
      const bool first = b == 0;
      const std::size_t stride = first ? stage.spatial_stride : 1;
      const std::string base = stage.name + ".b" + std::to_string(b);
      const std::size_t block_in = first ? in_c : stage.out_channels;

      if (arch.block_type == ResBlockType::kBottleneck) {
        // stride sits on the 3x3 conv; the first 1x1 runs at input resolution
        const std::size_t kt = stage.temporal_kernel ? 3 : 1;
        ConvLayer a{base + ".conv_a", kt, 1, 1, block_in, stage.mid_channels,
                    1, 1, true, false};
        LayerCost ca = layer_cost(a, t, spatial);
        report.items.push_back({a.name, "conv", ca.macs * u, ca.params});

        ConvLayer bb{base + ".conv_b", 1, 3, 3, stage.mid_channels,
                     stage.mid_channels, 1, stride, true, false};
        LayerCost cb = layer_cost(bb, t, spatial);
        const std::size_t out_s = strided_out(spatial, 3, stride, bb.name);
        report.items.push_back({bb.name, "conv", cb.macs * u, cb.params});

        ConvLayer cc{base + ".conv_c", 1, 1, 1, stage.mid_channels,
                     stage.out_channels, 1, 1, true, false};
        LayerCost ccost = layer_cost(cc, t, out_s);
        report.items.push_back({cc.name, "conv", ccost.macs * u, ccost.params});

        if (first && (block_in != stage.out_channels || stride > 1)) {
          ConvLayer d{base + ".downsample", 1, 1, 1, block_in,
                      stage.out_channels, 1, stride, true, false};
          LayerCost cd = layer_cost(d, t, spatial);
          report.items.push_back({d.name, "conv", cd.macs * u, cd.params});
        }
        spatial = out_s;
      } else {
        const std::size_t kt = stage.temporal_kernel ? 3 : 1;
        ConvLayer a{base + ".conv_a", kt, 3, 3, block_in, stage.out_channels,
                    1, stride, true, false};
        LayerCost ca = layer_cost(a, t, spatial);
        const std::size_t out_s = strided_out(spatial, 3, stride, a.name);
        report.items.push_back({a.name, "conv", ca.macs * u, ca.params});

        ConvLayer bb{base + ".conv_b", kt, 3, 3, stage.out_channels,
                     stage.out_channels, 1, 1, true, false};
        LayerCost cb = layer_cost(bb, t, out_s);
        report.items.push_back({bb.name, "conv", cb.macs * u, cb.params});

        if (first && (block_in != stage.out_channels || stride > 1)) {
          ConvLayer d{base + ".downsample", 1, 1, 1, block_in,
                      stage.out_channels, 1, stride, true, false};
          LayerCost cd = layer_cost(d, t, spatial);
          report.items.push_back({d.name, "conv", cd.macs * u, cd.params});
        }
        spatial = out_s;
      }
      in_c = stage.out_channels;
    }
    if (resolution == arch.input_spatial) {
      require(spatial == stage.output_spatial,
              "arch_cost: stage " + stage.name + " computes " +
                  std::to_string(spatial) + "^2, declared " +
                  std::to_string(stage.output_spatial) + "^2");
    }
  }

  report.items.push_back({"global_pool", "pool", 0, 0});
  const unsigned long long fc_macs =
      static_cast<unsigned long long>(in_c) * classes;
  const unsigned long long fc_params = fc_macs + classes;
  report.items.push_back({"fc", "fc", fc_macs * u, fc_params});
  return report;
}

namespace {

void require_stage_names(const ArchSpec& arch,
                         const std::vector<std::string>& names) {
  for (const std::string& n : names) {
    bool found = false;
    for (const StageSpec& s : arch.stages) found = found || s.name == n;
    require(found, "dsa_overhead: unknown stage '" + n + "'");
  }
}

}  // namespace

CostReport dsa_overhead(const ArchSpec& arch, const DsaPlacementCost& placement,
                        std::size_t frames, std::size_t resolution) {
  arch.validate();
  require_stage_names(arch, placement.stages);
  CostReport report;
  report.arch = arch.name + "+dsa";
  report.frames = frames;
  report.resolution = resolution;
  report.snippets = placement.snippets;
  report.classes = arch.classes;

  // walk spatial sizes the same way arch_cost does
  std::size_t spatial = strided_out(resolution, arch.conv1_k, arch.conv1_stride,
                                    "conv1");
  spatial = strided_out(spatial, arch.pool1_k, arch.pool1_stride, "pool1");

  for (const StageSpec& stage : arch.stages) {
    spatial = strided_out(spatial, 3, stage.spatial_stride, stage.name);
    bool wanted = false;
    for (const std::string& name : placement.stages) {
      wanted = wanted || name == stage.name;
    }
    if (!wanted) continue;

    const std::size_t width = arch.block_type == ResBlockType::kBottleneck
                                  ? stage.mid_channels
                                  : stage.out_channels;
    DsaConfig cfg;
    cfg.channels = width;
    cfg.snippets = placement.snippets;
    cfg.kernel_size = placement.kernel_size;
    cfg.width_factor = placement.width_factor;
    cfg.dynamic_fraction = placement.dynamic_fraction;
    cfg.validate();

    const std::size_t modules = stage.blocks / 2;
    const Shape feature{1, width, placement.snippets, frames, spatial, spatial};
    const DsaCost cost = dsa_flops(cfg, feature);
    const unsigned long long params = dsa_param_count(cfg);
    for (std::size_t m = 0; m < modules; ++m) {
      // every other block, starting from the second
      const std::string name =
          stage.name + ".b" + std::to_string(2 * m + 1) + ".dsa";
      report.items.push_back({name, "dsa", cost.total(), params});
    }
  }
  return report;
}

std::string report_render(const CostReport& report, ReportFormat format) {
  if (format == ReportFormat::kJson) {
    nlohmann::ordered_json j;
    j["arch"] = report.arch;
    j["frames"] = report.frames;
    j["resolution"] = report.resolution;
    j["snippets"] = report.snippets;
    j["classes"] = report.classes;
    j["convention"] = "1 MAC = 1 FLOP; BN/ReLU/pool free; per-clip totals";
    j["items"] = nlohmann::ordered_json::array();
    for (const CostItem& i : report.items) {
      j["items"].push_back({{"name", i.name},
                            {"kind", i.kind},
                            {"macs", i.macs},
                            {"params", i.params}});
    }
    j["totals"] = {{"macs", report.total_macs()},
                   {"conv_macs", report.conv_macs()},
                   {"classifier_macs", report.classifier_macs()},
                   {"params", report.total_params()}};
    return j.dump(2) + "\n";
  }

  std::ostringstream os;
  char line[160];
  os << "arch: " << report.arch << "  input: " << report.frames << "x"
     << report.resolution << "^2  snippets: " << report.snippets
     << "  classes: " << report.classes << "\n";
  os << "convention: 1 MAC = 1 FLOP; BN/ReLU/pool free; per-clip totals\n";
  std::snprintf(line, sizeof(line), "%-26s %-6s %16s %14s\n", "layer", "kind",
                "MACs", "params");
  os << line;
  for (const CostItem& i : report.items) {
    std::snprintf(line, sizeof(line), "%-26s %-6s %16llu %14llu\n",
                  i.name.c_str(), i.kind.c_str(), i.macs, i.params);
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-26s %-6s %16llu %14llu\n", "total", "",
                report.total_macs(), report.total_params());
  os << line;
  std::snprintf(line, sizeof(line), "total: %.3f GFLOPs, %.3f M params\n",
                report.total_gflops(),
                static_cast<double>(report.total_params()) / 1e6);
  os << line;
  return os.str();
}

CostReport report_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  CostReport r;
  r.arch = j.at("arch").get<std::string>();
  r.frames = j.at("frames").get<std::size_t>();
  r.resolution = j.at("resolution").get<std::size_t>();
  r.snippets = j.at("snippets").get<std::size_t>();
  r.classes = j.at("classes").get<std::size_t>();
  for (const auto& ji : j.at("items")) {
    CostItem item;
    item.name = ji.at("name").get<std::string>();
    item.kind = ji.at("kind").get<std::string>();
    item.macs = ji.at("macs").get<unsigned long long>();
    item.params = ji.at("params").get<unsigned long long>();
    r.items.push_back(std::move(item));
  }
  return r;
}

}  // namespace dsanet
