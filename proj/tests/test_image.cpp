#include "doctest.h"
#include "seal/core.hpp"
#include "seal/image.hpp"
#include "support.hpp"

using namespace seal;

TEST_CASE("PNG round-trip is exact on 8-bit levels") {
    test::TempDir dir("png");
    Image rgb(5, 7, 3);
    for (std::size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] = static_cast<double>((i * 37) % 256) / 255.0;
    write_png(dir.file("rgb.png"), rgb);
    CHECK(read_png(dir.file("rgb.png"), 3) == rgb);

    Image gray(4, 4, 1);
    for (std::size_t i = 0; i < gray.data.size(); ++i) gray.data[i] = static_cast<double>(i * 17) / 255.0;
    write_png(dir.file("gray.png"), gray);
    CHECK(read_png(dir.file("gray.png"), 1) == gray);
    // Gray promoted to RGB repeats the level.
    const Image promoted = read_png(dir.file("gray.png"), 3);
    CHECK(promoted.at(2, 3, 0) == gray.at(2, 3, 0));
    CHECK(promoted.at(2, 3, 2) == gray.at(2, 3, 0));
}

TEST_CASE("write_png clamps out-of-range values") {
    test::TempDir dir("clamp");
    Image img(1, 2, 1);
    img.data = {-0.5, 1.5};
    write_png(dir.file("c.png"), img);
    CHECK(read_png(dir.file("c.png"), 1).data == std::vector<double>{0.0, 1.0});
}

TEST_CASE("read_png separates missing files from malformed ones") {
    test::TempDir dir("bad");
    std::ofstream(dir.file("junk.png")) << "not a png";
    auto kind = [](const std::string& path) {
        try {
            read_png(path, 3);
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::usage;
    };
    CHECK(kind(dir.file("missing.png")) == ErrorKind::io);
    CHECK(kind(dir.file("junk.png")) == ErrorKind::validation);
}

TEST_CASE("resize_bilinear") {
    Image img(2, 2, 1);
    img.data = {0.0, 1.0, 1.0, 0.0};
    CHECK(resize_bilinear(img, 2, 2) == img);
    const Image big = resize_bilinear(img, 4, 4);
    // Pixel centres at 0.25 and 0.75 of the source cell spacing; corners clamp.
    CHECK(big.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(big.at(0, 1, 0) == doctest::Approx(0.25));
    CHECK(big.at(1, 1, 0) == doctest::Approx(0.375));
    Image flat(3, 5, 3);
    for (auto& v : flat.data) v = 0.4;
    for (double v : resize_bilinear(flat, 7, 2).data) CHECK(v == doctest::Approx(0.4));
}
