#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "dgs/error.hpp"
#include "dgs/image.hpp"
#include "dgs/loss.hpp"
#include "dgs/rng.hpp"

using namespace dgs;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dgs_test_image";
    fs::create_directories(dir);
    return dir / name;
}

Image random_image(int w, int h, std::uint64_t seed) {
    Image img(w, h);
    Rng rng(seed);
    for (double& v : img.data) {
        v = rng.uniform();
    }
    return img;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST(Ppm, BlackImageBytes) {
    const fs::path p = temp_path("black.ppm");
    write_image(p, Image(3, 2));
    const std::string bytes = read_bytes(p);
    const std::string header = "P6\n3 2\n255\n";
    ASSERT_EQ(bytes.size(), header.size() + 18);
    EXPECT_EQ(bytes.substr(0, header.size()), header);
    for (std::size_t i = header.size(); i < bytes.size(); ++i) {
        EXPECT_EQ(bytes[i], '\0');
    }
}

TEST(Ppm, RoundTripQuantization) {
    const Image img = random_image(17, 9, 1);
    const fs::path p = temp_path("rt.ppm");
    write_image(p, img);
    const Image back = read_image(p);
    ASSERT_EQ(back.width, 17);
    ASSERT_EQ(back.height, 9);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        EXPECT_LE(std::abs(back.data[i] - img.data[i]), 1.0 / 510.0 + 1e-15);
    }
    EXPECT_EQ(back.data, quantize_8bit(img).data);
}

TEST(Ppm, ClampsOutOfRange) {
    Image img(1, 1);
    img.data = {-0.3, 1.7, 0.5};
    const fs::path p = temp_path("clamp.ppm");
    write_image(p, img);
    const Image back = read_image(p);
    EXPECT_EQ(back.data[0], 0.0);
    EXPECT_EQ(back.data[1], 1.0);
    EXPECT_EQ(back.data[2], 128.0 / 255.0);
}

TEST(Ppm, TruncatedIsMalformed) {
    const fs::path p = temp_path("trunc.ppm");
    write_image(p, random_image(4, 4, 2));
    const std::string bytes = read_bytes(p);
    {
        std::ofstream out(p, std::ios::binary);
        out << bytes.substr(0, bytes.size() - 5);
    }
    EXPECT_THROW(read_image(p), MalformedHeader);
    {
        std::ofstream out(p, std::ios::binary);
        out << "P6\n4";
    }
    EXPECT_THROW(read_image(p), MalformedHeader);
}

TEST(Ppm, BadMagicAndMissingFile) {
    const fs::path p = temp_path("magic.ppm");
    {
        std::ofstream out(p, std::ios::binary);
        out << "P3\n1 1\n255\n0 0 0\n";
    }
    EXPECT_THROW(read_image(p), MalformedHeader);
    EXPECT_THROW(read_image(temp_path("does_not_exist.ppm")), IoError);
}

TEST(Psnr, Values) {
    const Image a = random_image(8, 8, 3);
    EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
    Image b(8, 8, 0.2), c(8, 8, 0.3);
    EXPECT_NEAR(psnr(b, c), 20.0, 1e-12);
    const Image d = random_image(8, 8, 4);
    EXPECT_EQ(psnr(a, d), psnr(d, a));
    EXPECT_THROW(psnr(a, Image(8, 7)), ShapeMismatch);
}

TEST(Ssim, IdenticalIsOne) {
    const Image a = random_image(20, 15, 5);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, CheckerboardVersusNegative) {
    Image a(16, 16), b(16, 16);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            const double v = ((x + y) % 2 == 0) ? 0.8 : 0.2;
            for (int c = 0; c < 3; ++c) {
                a.at(x, y, c) = v;
                b.at(x, y, c) = 1.0 - v;
            }
        }
    }
    // Same means and variances, covariance -var: the structure term alone
    // gives (C2/2 - var) / (var + C2/2) per window.
    const double s = ssim(a, b);
    EXPECT_LT(s, 0.0);
    EXPECT_GT(s, -1.0);
}

TEST(Ssim, SymmetricAndShapeChecked) {
    const Image a = random_image(13, 11, 6);
    const Image b = random_image(13, 11, 7);
    EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
    EXPECT_THROW(ssim(a, Image(11, 13)), ShapeMismatch);
}

TEST(Ssim, GradientMatchesDifferences) {
    const Image a = random_image(12, 10, 8);
    const Image b = random_image(12, 10, 9);
    Image g;
    const double s = ssim_with_grad(a, b, g);
    EXPECT_DOUBLE_EQ(s, ssim(a, b));
    Rng rng(10);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t i = rng.index(a.data.size());
        Image up = a, dn = a;
        up.data[i] += 1e-6;
        dn.data[i] -= 1e-6;
        const double fd = (ssim(up, b) - ssim(dn, b)) / 2e-6;
        EXPECT_NEAR(g.data[i], fd, 1e-7 + 1e-5 * std::abs(fd));
    }
}

TEST(Photometric, Examples) {
    const Image a = random_image(12, 12, 11);
    EXPECT_EQ(photometric_loss(a, a), 0.0);
    Image b(12, 12, 0.4), c(12, 12, 0.5);
    EXPECT_NEAR(photometric_loss(b, c, 0.0), 0.1, 1e-15);
    EXPECT_NEAR(l1_distance(b, c), 0.1, 1e-15);
    EXPECT_THROW(photometric_loss(a, Image(3, 3)), ShapeMismatch);
}

TEST(Photometric, GradientZeroAtIdentityAndMatchesDifferences) {
    const Image a = random_image(12, 12, 12);
    std::vector<Vec3> g;
    photometric_loss_with_grad(a, a, 0.2, 1.0, g);
    for (const Vec3& v : g) {
        EXPECT_EQ(v, Vec3::Zero());
    }
    const Image b = random_image(12, 12, 13);
    g.clear();
    const double l = photometric_loss_with_grad(a, b, 0.2, 2.0, g);
    EXPECT_DOUBLE_EQ(l, photometric_loss(a, b, 0.2));
    Rng rng(14);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t i = rng.index(a.data.size());
        Image up = a, dn = a;
        up.data[i] += 1e-7;
        dn.data[i] -= 1e-7;
        const double fd = 2.0 * (photometric_loss(up, b, 0.2) - photometric_loss(dn, b, 0.2)) / 2e-7;
        EXPECT_NEAR(g[i / 3][static_cast<int>(i % 3)], fd, 1e-6 + 1e-5 * std::abs(fd));
    }
}
