#include "mmdstyle/cli.h"

#include "mmdstyle/image_io.h"
#include "mmdstyle/network.h"
#include "mmdstyle/optimizer.h"
#include "mmdstyle/weights_io.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mmdstyle {

namespace {

std::optional<StyleMethod> parse_single(const std::string& name, double poly_c) {
    if (name == "gram") return GramMethod{};
    if (name == "linear") return LinearMmdMethod{};
    if (name == "poly") return PolyMmdMethod{poly_c};
    if (name == "gaussian") return GaussianMmdMethod{MeanOfPairsBandwidth{}};
    if (name == "bn") return BnStatsMethod{};
    return std::nullopt;
}

std::optional<double> parse_number(const std::string& text) {
    if (text.empty()) return std::nullopt;
    std::size_t used = 0;
    try {
        const double v = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(v)) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string part;
    std::istringstream in(text);
    while (std::getline(in, part, sep)) parts.push_back(part);
    if (!text.empty() && text.back() == sep) parts.emplace_back();
    return parts;
}

struct CliOptions {
    std::string content;
    std::string style;
    std::string weights;
    std::string output;
    std::string method = "gram";
    double gamma = 1.0;
    double poly_c = 0.0;
    std::size_t max_iters = 1000;
    double tol = 0.005;
    std::uint64_t seed = 0;
    std::string style_size;
    std::string pooling = "max";
    std::string layer_weights;
    std::string trace;
    std::size_t save_every = 0;
    std::size_t size = 512;
};

RgbImage resize_long_side(const RgbImage& img, std::size_t long_side) {
    if (long_side == 0) return img;
    const double scale =
        static_cast<double>(long_side) / static_cast<double>(std::max(img.width, img.height));
    const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.width * scale)));
    const auto h =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.height * scale)));
    return resize_bilinear(img, w, h);
}

}  // namespace

std::optional<FusionSpec> parse_method(const std::string& text, double poly_c) {
    if (text.find(':') == std::string::npos && text.find('+') == std::string::npos) {
        if (auto m = parse_single(text, poly_c)) return FusionSpec(*m);
        return std::nullopt;
    }
    std::vector<FusionEntry> entries;
    for (const auto& term : split(text, '+')) {
        const auto colon = term.find(':');
        if (colon == std::string::npos) return std::nullopt;
        auto method = parse_single(term.substr(0, colon), poly_c);
        auto weight = parse_number(term.substr(colon + 1));
        if (!method || !weight || *weight < 0.0) return std::nullopt;
        entries.push_back({*method, *weight});
    }
    try {
        return FusionSpec(std::move(entries));
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
}

std::string snapshot_path(const std::string& output, std::size_t iter) {
    const std::filesystem::path path(output);
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "_%04zu", iter);
    auto name = path.stem().string() + suffix + path.extension().string();
    return (path.parent_path() / name).string();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Neural style transfer by feature distribution alignment", "mmdstyle"};
    CliOptions opt;
    app.add_option("--content", opt.content, "content image (PNG)")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--style", opt.style, "style image (PNG)")->required()->check(CLI::ExistingFile);
    app.add_option("--weights", opt.weights, "VGG-19 weights (MMDW container)")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--output", opt.output, "output PNG")->required();
    app.add_option("--method", opt.method,
                   "gram | linear | poly | gaussian | bn, or a fusion like bn:0.5+poly:0.5")
        ->capture_default_str();
    app.add_option("--gamma", opt.gamma, "content/style balance")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--poly-c", opt.poly_c, "polynomial kernel offset")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--max-iters", opt.max_iters)->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--tol", opt.tol, "relative-change stopping threshold")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app.add_option("--seed", opt.seed)->capture_default_str();
    app.add_option("--style-size", opt.style_size, "resize the style image to WxH");
    app.add_option("--pooling", opt.pooling)
        ->check(CLI::IsMember({"max", "avg"}))
        ->capture_default_str();
    app.add_option("--layer-weights", opt.layer_weights,
                   "comma-separated weight per style layer");
    app.add_option("--trace", opt.trace, "write the loss trace as CSV");
    app.add_option("--save-every", opt.save_every, "write a snapshot every N iterations");
    app.add_option("--size", opt.size, "content image long side in pixels, 0 keeps it")
        ->capture_default_str();

    auto usage_error = [&](const std::string& msg) {
        err << "error: " << msg << "\n\n" << app.help();
        return 2;
    };

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        return usage_error(e.what());
    }

    const auto method = parse_method(opt.method, opt.poly_c);
    if (!method) return usage_error("unknown method '" + opt.method + "'");

    std::optional<std::pair<std::size_t, std::size_t>> style_size;
    if (!opt.style_size.empty()) {
        const auto parts = split(opt.style_size, 'x');
        const auto w = parts.size() == 2 ? parse_number(parts[0]) : std::nullopt;
        const auto h = parts.size() == 2 ? parse_number(parts[1]) : std::nullopt;
        if (!w || !h || *w < 1 || *h < 1 || *w != std::floor(*w) || *h != std::floor(*h)) {
            return usage_error("--style-size expects WxH, got '" + opt.style_size + "'");
        }
        style_size.emplace(static_cast<std::size_t>(*w), static_cast<std::size_t>(*h));
    }

    TransferConfig config;
    config.gamma = opt.gamma;
    config.method = *method;
    config.max_iters = opt.max_iters;
    config.rel_tol = opt.tol;
    config.seed = opt.seed;
    if (!opt.layer_weights.empty()) {
        for (const auto& part : split(opt.layer_weights, ',')) {
            const auto w = parse_number(part);
            if (!w || *w < 0.0) return usage_error("bad --layer-weights entry '" + part + "'");
            config.layer_weights.push_back(*w);
        }
        if (config.layer_weights.size() != config.style_layers.size()) {
            return usage_error("--layer-weights needs " +
                               std::to_string(config.style_layers.size()) + " values");
        }
    }

    try {
        const auto spec = build_vgg19(load_container(opt.weights),
                                      opt.pooling == "avg" ? PoolMode::Avg : PoolMode::Max);
        const auto content_img = resize_long_side(read_png(opt.content), opt.size);
        auto style_img = read_png(opt.style);
        if (style_size) style_img = resize_bilinear(style_img, style_size->first, style_size->second);

        IterationCallback snapshot;
        if (opt.save_every > 0) {
            snapshot = [&](std::size_t iter, const Tensor4& image) {
                if (iter > 0 && iter % opt.save_every == 0) {
                    write_png(postprocess(image), snapshot_path(opt.output, iter));
                }
            };
        }
        const auto result =
            run_transfer(spec, preprocess(content_img), preprocess(style_img), config, snapshot);
        write_png(postprocess(result.image), opt.output);
        if (!opt.trace.empty()) {
            std::ofstream trace(opt.trace);
            if (!trace) throw std::runtime_error("cannot write trace " + opt.trace);
            write_trace_csv(trace, result.trace);
        }
        const auto& last = result.trace.back();
        out << "method " << config.method.str() << ", beta' " << result.calibration.beta_prime
            << ", " << result.trace.size() << " iterations, loss " << last.total << " (content "
            << last.content << ", style " << last.style << ")\n";
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace mmdstyle
