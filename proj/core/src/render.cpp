#include "dgs/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dgs/parallel.hpp"
#include "dgs/sh.hpp"

namespace dgs {

namespace {

constexpr int kTile = 16;
constexpr double kNear = 1e-9;
// sqrt(2 ln(1 / cutoff)) = 4.2919; rounded up for the culling boxes.
constexpr double kCullSigmas = 4.30;

struct Hit {
    double tau = 0.0;
    Vec2 u = Vec2::Zero();
    double g_object = 0.0;
};

std::optional<Hit> intersect_geometry(const Vec3& o, const Vec3& d, const Primitive& p) {
    const Mat3& m = p.rotation;
    Hit hit;
    if (p.planar) {
        const Vec3 n = m.col(2);
        const double den = n.dot(d);
        if (std::abs(den) < kParallelEps * d.norm()) {
            return std::nullopt;
        }
        hit.tau = n.dot(p.center - o) / den;
        if (!(hit.tau > 0.0)) {
            return std::nullopt;
        }
        const Vec3 r = o + hit.tau * d - p.center;
        hit.u = Vec2(m.col(0).dot(r) / p.scale.x(), m.col(1).dot(r) / p.scale.y());
        hit.g_object = gaussian_weight(hit.u);
        return hit;
    }
    const Vec3 a = (m.transpose() * (o - p.center)).cwiseQuotient(p.scale);
    const Vec3 b = (m.transpose() * d).cwiseQuotient(p.scale);
    const double bb = b.squaredNorm();
    if (!(bb > 0.0)) {
        return std::nullopt;
    }
    hit.tau = -a.dot(b) / bb;
    if (!(hit.tau > 0.0)) {
        return std::nullopt;
    }
    const Vec3 y = a + hit.tau * b;
    hit.u = y.head<2>();
    hit.g_object = std::exp(-0.5 * y.squaredNorm());
    return hit;
}

struct ScreenTerm {
    bool valid = false;
    Vec2 pixel = Vec2::Zero();
    Vec3 cam = Vec3::Zero();
};

ScreenTerm project_center(const Camera& cam, const Vec3& center) {
    ScreenTerm s;
    s.cam = cam.to_camera(center);
    if (s.cam.z() > kNear) {
        s.valid = true;
        s.pixel = Vec2(cam.fx * s.cam.x() / s.cam.z() + cam.cx, cam.fy * s.cam.y() / s.cam.z() + cam.cy);
    }
    return s;
}

double screen_weight(const ScreenTerm& s, const Vec2& px, double sigma) {
    if (!s.valid) {
        return 0.0;
    }
    return std::exp(-(px - s.pixel).squaredNorm() / (2.0 * sigma * sigma));
}

struct Box {
    double x0, x1, y0, y1;
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

Box cull_box(const Camera& cam, const Primitive& p, double sigma) {
    const Box full{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                   -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    Box box{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    const int axes = p.planar ? 2 : 3;
    const int corners = 1 << axes;
    for (int c = 0; c < corners; ++c) {
        Vec3 w = p.center;
        for (int a = 0; a < axes; ++a) {
            const double sgn = (c >> a) & 1 ? 1.0 : -1.0;
            w += sgn * kCullSigmas * p.scale[a] * p.rotation.col(a);
        }
        const Vec3 q = cam.to_camera(w);
        if (!(q.z() > kNear)) {
            return full;
        }
        const double px = cam.fx * q.x() / q.z() + cam.cx;
        const double py = cam.fy * q.y() / q.z() + cam.cy;
        box.x0 = std::min(box.x0, px);
        box.x1 = std::max(box.x1, px);
        box.y0 = std::min(box.y0, py);
        box.y1 = std::max(box.y1, py);
    }
    const ScreenTerm s = project_center(cam, p.center);
    if (s.valid) {
        const double r = kCullSigmas * sigma;
        box.x0 = std::min(box.x0, s.pixel.x() - r);
        box.x1 = std::max(box.x1, s.pixel.x() + r);
        box.y0 = std::min(box.y0, s.pixel.y() - r);
        box.y1 = std::max(box.y1, s.pixel.y() + r);
    }
    return box;
}

bool record_less(const IntersectionRecord& a, const IntersectionRecord& b) {
    if (a.depth != b.depth) {
        return a.depth < b.depth;
    }
    return a.index < b.index;
}

struct PrimGrad {
    Vec3 center = Vec3::Zero();
    Mat3 rotation = Mat3::Zero();
    Vec3 scale = Vec3::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();

    void add(const PrimGrad& o) {
        center += o.center;
        rotation += o.rotation;
        scale += o.scale;
        opacity += o.opacity;
        color += o.color;
    }
};

/// Reverse pass of one pixel record through the intersection and the
/// screen-space filter.
void intersection_backward(const Camera& cam, const Vec3& o, const Vec3& d, const Vec2& px, const Primitive& p,
                           const IntersectionRecord& rec, double g_gauss, double g_tau, const Vec3& g_normal,
                           double sigma, PrimGrad& g) {
    const Mat3& m = p.rotation;
    const double g_object = rec.object_term ? g_gauss : 0.0;
    const double g_screen = rec.object_term ? 0.0 : g_gauss;

    const Vec3 raw_n = m.col(2);
    const double flip = rec.normal.dot(raw_n) < 0.0 ? -1.0 : 1.0;
    g.rotation.col(2) += flip * g_normal;

    if (p.planar) {
        const Vec3 n = raw_n;
        const double den = n.dot(d);
        const double tau = n.dot(p.center - o) / den;
        const Vec3 r = o + tau * d - p.center;
        const Vec2 u(m.col(0).dot(r) / p.scale.x(), m.col(1).dot(r) / p.scale.y());
        const double gobj = gaussian_weight(u);
        const Vec2 g_u = -g_object * gobj * u;
        g.rotation.col(0) += (g_u.x() / p.scale.x()) * r;
        g.rotation.col(1) += (g_u.y() / p.scale.y()) * r;
        g.scale.x() -= g_u.x() * u.x() / p.scale.x();
        g.scale.y() -= g_u.y() * u.y() / p.scale.y();
        const Vec3 g_r = (g_u.x() / p.scale.x()) * m.col(0) + (g_u.y() / p.scale.y()) * m.col(1);
        const double g_tau_total = g_tau + g_r.dot(d);
        g.center -= g_r;
        const double g_num = g_tau_total / den;
        const double g_den = -g_tau_total * tau / den;
        g.rotation.col(2) += g_num * (p.center - o) + g_den * d;
        g.center += g_num * n;
    } else {
        const Vec3 om = o - p.center;
        const Vec3 a = (m.transpose() * om).cwiseQuotient(p.scale);
        const Vec3 b = (m.transpose() * d).cwiseQuotient(p.scale);
        const double bb = b.squaredNorm();
        const double tau = -a.dot(b) / bb;
        const Vec3 y = a + tau * b;
        const double gobj = std::exp(-0.5 * y.squaredNorm());
        const double g_rho = -0.5 * gobj * g_object;
        // rho is minimized over tau, so its partials hold tau fixed.
        Vec3 g_a = 2.0 * g_rho * y;
        Vec3 g_b = 2.0 * g_rho * tau * y;
        g_a -= (g_tau / bb) * b;
        g_b -= (g_tau / bb) * (a + 2.0 * tau * b);
        for (int i = 0; i < 3; ++i) {
            const double s = p.scale[i];
            g.rotation.col(i) += (g_a[i] / s) * om + (g_b[i] / s) * d;
            g.center -= (g_a[i] / s) * m.col(i);
            g.scale[i] -= (g_a[i] * a[i] + g_b[i] * b[i]) / s;
        }
    }

    if (g_screen != 0.0) {
        const ScreenTerm s = project_center(cam, p.center);
        if (s.valid) {
            const Vec2 e = px - s.pixel;
            const double gs = std::exp(-e.squaredNorm() / (2.0 * sigma * sigma));
            const Vec2 g_pix = g_screen * gs * e / (sigma * sigma);
            const double z = s.cam.z();
            const Vec3 g_cam(g_pix.x() * cam.fx / z, g_pix.y() * cam.fy / z,
                             -(g_pix.x() * cam.fx * s.cam.x() + g_pix.y() * cam.fy * s.cam.y()) / (z * z));
            g.center += cam.world_to_camera.rotation.transpose() * g_cam;
        }
    }
}

Vec3 image_ray_dir(const Camera& cam, int x, int y) { return cam.direction(x + 0.5, y + 0.5); }

} // namespace

Vec3 Camera::direction(double px, double py) const {
    const Vec3 c((px - cx) / fx, (py - cy) / fy, 1.0);
    return world_to_camera.rotation.transpose() * c;
}

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || width < 1 || height < 1) {
        throw std::invalid_argument("camera needs fx, fy > 0 and a positive resolution");
    }
}

double gaussian_weight(const Vec2& u) { return std::exp(-0.5 * u.squaredNorm()); }

double low_pass(double g_object, const Vec2& dpx, double sigma) {
    return std::max(g_object, std::exp(-dpx.squaredNorm() / (2.0 * sigma * sigma)));
}

std::optional<IntersectionRecord> ray_surfel_intersect(const Ray& ray, const Primitive& prim) {
    const auto hit = intersect_geometry(ray.origin, ray.direction, prim);
    if (!hit || hit->g_object < kGaussianCutoff) {
        return std::nullopt;
    }
    IntersectionRecord rec;
    rec.u = hit->u;
    rec.depth = hit->tau;
    rec.gaussian = hit->g_object;
    const Vec3 n = prim.rotation.col(2);
    rec.normal = n.dot(ray.direction) > 0.0 ? Vec3(-n) : n;
    rec.opacity = prim.opacity;
    rec.color = prim.color;
    return rec;
}

CompositeResult composite(std::span<IntersectionRecord> records, const Vec3& background) {
    CompositeResult out;
    double t = 1.0;
    double depth_sum = 0.0;
    Vec3 normal_sum = Vec3::Zero();
    for (IntersectionRecord& rec : records) {
        if (t < kMinTransmittance) {
            break;
        }
        const double a = rec.opacity * rec.gaussian;
        const double w = a * t;
        rec.weight = w;
        rec.transmittance = t;
        out.color += w * rec.color;
        out.alpha += w;
        depth_sum += w * rec.depth;
        normal_sum += w * rec.normal;
        t *= 1.0 - a;
        ++out.used;
    }
    out.color += t * background;
    out.transmittance = t;
    if (out.alpha > 0.0) {
        out.depth = depth_sum / out.alpha;
        const double nn = normal_sum.norm();
        if (nn > 0.0) {
            out.normal = normal_sum / nn;
        }
    }
    return out;
}

std::vector<Primitive> build_primitives(const ModelState& model, const WarpEvaluation& warp, const Camera& camera,
                                        Branch branch, std::vector<WarpedSurfel>* warped) {
    const std::size_t nk = model.surfels.size();
    std::vector<Primitive> prims(nk);
    if (warped) {
        warped->resize(nk);
    }
    const Vec3 eye = camera.center();
    parallel_for(nk, [&](std::size_t k) {
        const Surfel& s = model.surfels[k];
        const SE3Transform& j = warp.transforms.empty() ? SE3Transform{} : warp.transforms[k];
        const WarpedSurfel w = warp_surfel(s, j, branch);
        Primitive& p = prims[k];
        p.center = w.center;
        p.rotation = w.rotation;
        p.scale = w.scale;
        p.planar = w.planar;
        p.opacity = s.opacity();
        p.color = sh_color(model.config.sh_degree, s.sh, (w.center - eye).normalized());
        if (warped) {
            (*warped)[k] = w;
        }
    });
    return prims;
}

RenderOutput render(const ModelState& model, const Camera& camera, double t, Branch branch,
                    const RenderOptions& options) {
    return render_with_warp(model, camera, evaluate_warp(model, t), branch, options);
}

RenderOutput render_with_warp(const ModelState& model, const Camera& camera, const WarpEvaluation& warp,
                              Branch branch, const RenderOptions& options) {
    camera.validate();
    const int w = camera.width;
    const int h = camera.height;
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    const double sigma = model.config.lowpass_sigma;

    RenderOutput out;
    out.width = w;
    out.height = h;
    out.branch = branch;
    out.color = Image(w, h);
    out.alpha.assign(npix, 0.0);
    out.depth.assign(npix, 0.0);
    out.rendered_normal.assign(npix, Vec3::Zero());
    if (options.keep_trace) {
        out.records.resize(npix);
    }

    std::vector<WarpedSurfel> warped;
    std::vector<Primitive> prims = build_primitives(model, warp, camera, branch, &warped);
    std::vector<Box> boxes(prims.size());
    parallel_for(prims.size(), [&](std::size_t k) { boxes[k] = cull_box(camera, prims[k], sigma); });

    const int tiles_x = (w + kTile - 1) / kTile;
    const int tiles_y = (h + kTile - 1) / kTile;
    const Vec3 origin = camera.center();
    const Vec3 background = model.config.background;

    parallel_for(static_cast<std::size_t>(tiles_x) * tiles_y, [&](std::size_t tile) {
        const int tx = static_cast<int>(tile) % tiles_x;
        const int ty = static_cast<int>(tile) / tiles_x;
        const int x0 = tx * kTile;
        const int y0 = ty * kTile;
        const int x1 = std::min(w, x0 + kTile);
        const int y1 = std::min(h, y0 + kTile);
        const Box tile_box{x0 + 0.5, x1 - 0.5, y0 + 0.5, y1 - 0.5};
        std::vector<std::size_t> list;
        for (std::size_t k = 0; k < prims.size(); ++k) {
            const Box& b = boxes[k];
            if (b.x1 >= tile_box.x0 && b.x0 <= tile_box.x1 && b.y1 >= tile_box.y0 && b.y0 <= tile_box.y1) {
                list.push_back(k);
            }
        }
        std::vector<ScreenTerm> screen(list.size());
        for (std::size_t i = 0; i < list.size(); ++i) {
            screen[i] = project_center(camera, prims[list[i]].center);
        }
        std::vector<IntersectionRecord> recs;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const Vec2 px(x + 0.5, y + 0.5);
                const Vec3 d = image_ray_dir(camera, x, y);
                recs.clear();
                for (std::size_t i = 0; i < list.size(); ++i) {
                    const std::size_t k = list[i];
                    if (!boxes[k].contains(px.x(), px.y())) {
                        continue;
                    }
                    const Primitive& p = prims[k];
                    const auto hit = intersect_geometry(origin, d, p);
                    if (!hit) {
                        continue;
                    }
                    const double gs = screen_weight(screen[i], px, sigma);
                    const double g = std::max(hit->g_object, gs);
                    if (g < kGaussianCutoff) {
                        continue;
                    }
                    IntersectionRecord rec;
                    rec.index = k;
                    rec.u = hit->u;
                    rec.depth = hit->tau;
                    rec.gaussian = g;
                    rec.object_term = hit->g_object >= gs;
                    const Vec3 n = p.rotation.col(2);
                    rec.normal = n.dot(d) > 0.0 ? Vec3(-n) : n;
                    rec.opacity = p.opacity;
                    rec.color = p.color;
                    recs.push_back(rec);
                }
                std::sort(recs.begin(), recs.end(), record_less);
                const CompositeResult c = composite(recs, background);
                const std::size_t pix = static_cast<std::size_t>(y) * w + x;
                out.color.set_pixel(pix, c.color);
                out.alpha[pix] = c.alpha;
                out.depth[pix] = c.depth;
                out.rendered_normal[pix] = c.normal;
                if (options.keep_trace) {
                    out.records[pix].assign(recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(c.used));
                }
            }
        }
    });

    surface_normal_from_depth(out.depth, out.alpha, camera, out.surface_normal, out.normal_valid);
    if (options.keep_trace) {
        out.primitives = std::move(prims);
        out.warped = std::move(warped);
    }
    return out;
}

void surface_normal_from_depth(std::span<const double> depth, std::span<const double> alpha, const Camera& camera,
                               std::vector<Vec3>& normal, std::vector<unsigned char>& valid) {
    const int w = camera.width;
    const int h = camera.height;
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    normal.assign(npix, Vec3::Zero());
    valid.assign(npix, 0);
    auto point = [&](int x, int y) { return depth[static_cast<std::size_t>(y) * w + x] * image_ray_dir(camera, x, y); };
    auto opaque = [&](int x, int y) { return alpha[static_cast<std::size_t>(y) * w + x] >= kNormalAlpha; };
    for (int y = 1; y + 1 < h; ++y) {
        for (int x = 1; x + 1 < w; ++x) {
            if (!opaque(x, y) || !opaque(x - 1, y) || !opaque(x + 1, y) || !opaque(x, y - 1) || !opaque(x, y + 1)) {
                continue;
            }
            const Vec3 gx = 0.5 * (point(x + 1, y) - point(x - 1, y));
            const Vec3 gy = 0.5 * (point(x, y + 1) - point(x, y - 1));
            const Vec3 c = gx.cross(gy);
            const double len = c.norm();
            if (!(len > 0.0)) {
                continue;
            }
            const std::size_t pix = static_cast<std::size_t>(y) * w + x;
            normal[pix] = -c / len;
            valid[pix] = 1;
        }
    }
}

double normal_loss(const RenderOutput& out) {
    const std::size_t npix = static_cast<std::size_t>(out.width) * out.height;
    if (npix == 0 || out.records.size() != npix) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t p = 0; p < npix; ++p) {
        if (!out.normal_valid[p]) {
            continue;
        }
        const Vec3& n_surf = out.surface_normal[p];
        for (const IntersectionRecord& rec : out.records[p]) {
            total += rec.weight * (1.0 - rec.normal.dot(n_surf));
        }
    }
    return total / static_cast<double>(npix);
}

void normal_loss_backward(const RenderOutput& out, const Camera& camera, double scale, PixelGradients& grad) {
    const int w = out.width;
    const int h = out.height;
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    if (npix == 0 || out.records.size() != npix || scale == 0.0) {
        return;
    }
    grad.normal_weight.resize(npix, 0.0);
    grad.depth.resize(npix, 0.0);
    const double c0 = scale / static_cast<double>(npix);
    auto point = [&](int x, int y) {
        return out.depth[static_cast<std::size_t>(y) * w + x] * image_ray_dir(camera, x, y);
    };
    std::vector<Vec3> g_point(npix, Vec3::Zero());
    for (int y = 1; y + 1 < h; ++y) {
        for (int x = 1; x + 1 < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            if (!out.normal_valid[p]) {
                continue;
            }
            grad.normal_weight[p] += c0;
            Vec3 g_n = Vec3::Zero();
            for (const IntersectionRecord& rec : out.records[p]) {
                g_n -= c0 * rec.weight * rec.normal;
            }
            const Vec3 gx = 0.5 * (point(x + 1, y) - point(x - 1, y));
            const Vec3 gy = 0.5 * (point(x, y + 1) - point(x, y - 1));
            const Vec3 c = gx.cross(gy);
            const double len = c.norm();
            const Vec3 chat = c / len;
            // N = -c / |c|
            const Vec3 g_chat = -g_n;
            const Vec3 g_c = (g_chat - chat.dot(g_chat) * chat) / len;
            const Vec3 g_gx = gy.cross(g_c);
            const Vec3 g_gy = g_c.cross(gx);
            g_point[p + 1] += 0.5 * g_gx;
            g_point[p - 1] -= 0.5 * g_gx;
            g_point[p + w] += 0.5 * g_gy;
            g_point[p - w] -= 0.5 * g_gy;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            grad.depth[p] += image_ray_dir(camera, x, y).dot(g_point[p]);
        }
    }
}

void render_backward(const ModelState& model, const Camera& camera, const WarpEvaluation& warp,
                     const RenderOutput& out, const PixelGradients& pg, ModelState& grad,
                     std::vector<Mat3>& grad_rotation, std::vector<Vec3>& grad_translation) {
    const int w = out.width;
    const int h = out.height;
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    const std::size_t nk = model.surfels.size();
    if (out.records.size() != npix || out.primitives.size() != nk) {
        throw std::invalid_argument("render_backward needs a render made with keep_trace");
    }
    grad_rotation.resize(nk, Mat3::Zero());
    grad_translation.resize(nk, Vec3::Zero());
    const double sigma = model.config.lowpass_sigma;
    const Vec3 origin = camera.center();
    const Vec3 background = model.config.background;

    const int tiles_x = (w + kTile - 1) / kTile;
    const int tiles_y = (h + kTile - 1) / kTile;
    const std::size_t ntiles = static_cast<std::size_t>(tiles_x) * tiles_y;
    std::vector<std::vector<PrimGrad>> tile_grads(ntiles);

    parallel_for(ntiles, [&](std::size_t tile) {
        const int tx = static_cast<int>(tile) % tiles_x;
        const int ty = static_cast<int>(tile) / tiles_x;
        std::vector<PrimGrad>& acc = tile_grads[tile];
        for (int y = ty * kTile; y < std::min(h, (ty + 1) * kTile); ++y) {
            for (int x = tx * kTile; x < std::min(w, (tx + 1) * kTile); ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                const auto& recs = out.records[p];
                if (recs.empty()) {
                    continue;
                }
                const Vec3 g_color = pg.color.empty() ? Vec3::Zero() : pg.color[p];
                double g_alpha = pg.alpha.empty() ? 0.0 : pg.alpha[p];
                const double g_depth = pg.depth.empty() ? 0.0 : pg.depth[p];
                const double g_e = pg.normal_weight.empty() ? 0.0 : pg.normal_weight[p];
                double g_dsum = 0.0;
                const double a_tot = out.alpha[p];
                if (a_tot > 0.0) {
                    g_dsum = g_depth / a_tot;
                    g_alpha -= g_depth * out.depth[p] / a_tot;
                }
                const Vec3& n_surf = out.surface_normal[p];
                if (g_color.isZero() && g_alpha == 0.0 && g_dsum == 0.0 && g_e == 0.0) {
                    continue;
                }
                if (acc.empty()) {
                    acc.resize(nk);
                }
                const Vec2 px(x + 0.5, y + 0.5);
                const Vec3 d = image_ray_dir(camera, x, y);
                double rest = g_color.dot(background);
                for (std::size_t i = recs.size(); i-- > 0;) {
                    const IntersectionRecord& rec = recs[i];
                    const double a = rec.opacity * rec.gaussian;
                    const double e = 1.0 - rec.normal.dot(n_surf);
                    const double q = g_color.dot(rec.color) + g_alpha + g_dsum * rec.depth + g_e * e;
                    const double g_a = rec.transmittance * (q - rest);
                    rest = a * q + (1.0 - a) * rest;

                    PrimGrad& g = acc[rec.index];
                    g.opacity += g_a * rec.gaussian;
                    g.color += rec.weight * g_color;
                    const double g_gauss = g_a * rec.opacity;
                    const double g_tau = rec.weight * g_dsum;
                    const Vec3 g_normal = -(rec.weight * g_e) * n_surf;
                    intersection_backward(camera, origin, d, px, out.primitives[rec.index], rec, g_gauss, g_tau,
                                          g_normal, sigma, g);
                }
            }
        }
    });

    std::vector<PrimGrad> total(nk);
    for (const auto& acc : tile_grads) {
        if (acc.empty()) {
            continue;
        }
        for (std::size_t k = 0; k < nk; ++k) {
            total[k].add(acc[k]);
        }
    }

    const Branch branch = out.branch;
    const int degree = model.config.sh_degree;
    parallel_for(nk, [&](std::size_t k) {
        const Surfel& s = model.surfels[k];
        Surfel& gs = grad.surfels[k];
        const Primitive& prim = out.primitives[k];
        PrimGrad g = total[k];
        const SE3Transform j = warp.transforms.empty() ? SE3Transform{} : warp.transforms[k];

        // view-dependent color
        if (!g.color.isZero()) {
            const Vec3 v = prim.center - origin;
            const double len = v.norm();
            const Vec3 dir = v / len;
            const Vec3 g_dir = sh_color_vjp(degree, s.sh, dir, g.color, gs.sh);
            g.center += (g_dir - dir.dot(g_dir) * dir) / len;
        }

        const double alpha = prim.opacity;
        gs.opacity_logit += g.opacity * alpha * (1.0 - alpha);

        const Vec2 sc = s.scale();
        if (branch == Branch::Base) {
            gs.log_scale += Vec2(g.scale.x() * sc.x(), g.scale.y() * sc.y());
        } else {
            const Vec3 raw(sc.x() + s.refine_scale.x(), sc.y() + s.refine_scale.y(), s.refine_scale.z());
            for (int i = 0; i < 3; ++i) {
                if (raw[i] > kMinRefinedScale) {
                    gs.refine_scale[i] += g.scale[i];
                    if (i < 2) {
                        gs.log_scale[i] += g.scale[i] * sc[i];
                    }
                }
            }
        }

        const Mat3 frame = s.frame();
        Mat3 g_warp_rot = Mat3::Zero();
        if (branch == Branch::Base) {
            g_warp_rot += g.rotation * frame.transpose();
            gs.rotation += rotmat_from_raw_vjp(s.rotation, j.rotation.transpose() * g.rotation);
        } else {
            const Mat3 dr = quat_to_rotmat(s.refine_rotation);
            g_warp_rot += g.rotation * (dr * frame).transpose();
            gs.refine_rotation +=
                rotmat_from_raw_vjp(s.refine_rotation, j.rotation.transpose() * g.rotation * frame.transpose());
            gs.rotation += rotmat_from_raw_vjp(s.rotation, (j.rotation * dr).transpose() * g.rotation);
        }

        g_warp_rot += g.center * s.center.transpose();
        gs.center += j.rotation.transpose() * g.center;
        grad_rotation[k] += g_warp_rot;
        grad_translation[k] += g.center;
    });
}

} // namespace dgs
