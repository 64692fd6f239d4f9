#include "d3t/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "d3t/image_io.hpp"
#include "d3t/rng.hpp"

namespace d3t::data {

namespace fs = std::filesystem;

Tensor Dataset::item(long i) const {
    if (i < 0 || i >= count()) throw std::out_of_range("Dataset::item: index out of range");
    const long plane = 3l * resolution * resolution;
    Tensor t({3, resolution, resolution});
    std::copy_n(images.ptr() + i * plane, plane, t.ptr());
    return t;
}

uint64_t Dataset::hash() const {
    uint64_t h = fnv1a64(&resolution, sizeof(resolution));
    for (uint64_t ih : item_hashes) h = fnv1a64(&ih, sizeof(ih), h);
    return h;
}

Dataset ingest_dataset(const std::string& dir, int resolution) {
    if (resolution <= 0) throw std::invalid_argument("ingest_dataset: resolution must be positive");
    if (!fs::is_directory(dir)) throw std::runtime_error("ingest_dataset: not a directory: " + dir);

    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") files.push_back(e.path().filename().string());
    }
    std::sort(files.begin(), files.end());

    Dataset ds;
    ds.resolution = resolution;
    std::vector<Tensor> slices;
    for (const auto& name : files) {
        Tensor unit;
        try {
            unit = img::read_png((fs::path(dir) / name).string());
        } catch (const std::exception& e) {
            std::fprintf(stderr, "warning: skipping unreadable image %s: %s\n", name.c_str(),
                         e.what());
            continue;
        }
        Tensor sq = img::crop_resize(unit, resolution);
        for (auto& v : sq.data) v = v * 2.f - 1.f;
        ds.item_hashes.push_back(tensor_hash(sq));
        ds.names.push_back(name);
        slices.push_back(std::move(sq));
    }
    if (slices.empty())
        throw std::runtime_error("ingest_dataset: no readable .png images in " + dir);

    const long plane = 3l * resolution * resolution;
    ds.images = Tensor({static_cast<int>(slices.size()), 3, resolution, resolution});
    for (size_t i = 0; i < slices.size(); ++i)
        std::copy_n(slices[i].ptr(), plane, ds.images.ptr() + static_cast<long>(i) * plane);
    return ds;
}

namespace {

/// Coverage of an implicit region on a 4x4 subsample grid per pixel.
template <class Inside>
void render_shape(Tensor& im, const float bg[3], const float fg[3], Inside inside) {
    const int r = im.dim(1);
    const long plane = static_cast<long>(r) * r;
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
            int hit = 0;
            for (int sy = 0; sy < 4; ++sy)
                for (int sx = 0; sx < 4; ++sx)
                    if (inside(x + (sx + 0.5) / 4.0, y + (sy + 0.5) / 4.0)) ++hit;
            const float a = hit / 16.f;
            for (int c = 0; c < 3; ++c)
                im[c * plane + static_cast<long>(y) * r + x] = bg[c] + a * (fg[c] - bg[c]);
        }
}

Tensor render_ellipse(int r, Rng& rng) {
    const float bg[3] = {static_cast<float>(rng.uniform(0.05, 0.45)),
                         static_cast<float>(rng.uniform(0.05, 0.45)),
                         static_cast<float>(rng.uniform(0.05, 0.45))};
    const float fg[3] = {static_cast<float>(rng.uniform(0.55, 0.95)),
                         static_cast<float>(rng.uniform(0.55, 0.95)),
                         static_cast<float>(rng.uniform(0.55, 0.95))};
    const double cx = rng.uniform(0.3, 0.7) * r, cy = rng.uniform(0.3, 0.7) * r;
    const double a = rng.uniform(0.15, 0.35) * r, b = rng.uniform(0.15, 0.35) * r;
    const double th = rng.uniform(0.0, 3.14159265358979);
    const double ct = std::cos(th), st = std::sin(th);

    Tensor im({3, r, r});
    render_shape(im, bg, fg, [&](double px, double py) {
        const double dx = px - cx, dy = py - cy;
        const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
        return u * u + v * v <= 1.0;
    });
    return im;
}

Tensor render_cross(int r, Rng& rng) {
    const float bg[3] = {static_cast<float>(rng.uniform(0.05, 0.45)),
                         static_cast<float>(rng.uniform(0.05, 0.45)),
                         static_cast<float>(rng.uniform(0.05, 0.45))};
    const float fg[3] = {static_cast<float>(rng.uniform(0.55, 0.95)),
                         static_cast<float>(rng.uniform(0.55, 0.95)),
                         static_cast<float>(rng.uniform(0.55, 0.95))};
    const double cx = rng.uniform(0.35, 0.65) * r, cy = rng.uniform(0.35, 0.65) * r;
    const double hl = rng.uniform(0.2, 0.4) * r;   // bar half-length
    const double hw = rng.uniform(0.04, 0.1) * r;  // bar half-width
    const double th = rng.uniform(0.0, 1.57079632679489);
    const double ct = std::cos(th), st = std::sin(th);

    Tensor im({3, r, r});
    render_shape(im, bg, fg, [&](double px, double py) {
        const double dx = px - cx, dy = py - cy;
        const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
        const bool bar1 = std::abs(u) <= hl && std::abs(v) <= hw;
        const bool bar2 = std::abs(v) <= hl && std::abs(u) <= hw;
        return bar1 || bar2;
    });
    return im;
}

void write_domain(const fs::path& dir, int count, int r, Rng base, bool crosses) {
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i) {
        Rng rng = base.fork(static_cast<uint64_t>(i));
        Tensor im = crosses ? render_cross(r, rng) : render_ellipse(r, rng);
        for (auto& v : im.data) v = v * 2.f - 1.f;
        char name[16];
        std::snprintf(name, sizeof(name), "%05d.png", i);
        img::write_png((dir / name).string(), im);
    }
}

} // namespace

void make_toy_domains(const ToySpec& spec, uint64_t seed, const std::string& out_dir) {
    if (spec.resolution <= 0)
        throw std::invalid_argument("make_toy_domains: resolution must be positive");
    if (spec.source_count <= 0 || spec.target_count <= 0)
        throw std::invalid_argument("make_toy_domains: image counts must be positive");
    const fs::path root(out_dir);
    write_domain(root / "source", spec.source_count, spec.resolution,
                 Rng(Rng::mix(seed, fnv1a64("source", 6))), false);
    write_domain(root / "target", spec.target_count, spec.resolution,
                 Rng(Rng::mix(seed, fnv1a64("target", 6))), true);
}

} // namespace d3t::data
