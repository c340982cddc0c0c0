#include "test_util.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "ltcl/checkpoint.hpp"
#include "ltcl/error.hpp"

using namespace ltcl;

namespace {

std::string serialized(const Model& m) {
    std::ostringstream out(std::ios::binary);
    write_checkpoint(out, m);
    return out.str();
}

ParseFailure failure_of(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    try {
        read_checkpoint(in);
    } catch (const ParseError& e) {
        return e.failure();
    }
    FAIL("expected a parse error");
    return ParseFailure::Unreadable;
}

template <typename T>
void poke(std::string& bytes, std::size_t offset, T value) {
    std::memcpy(bytes.data() + offset, &value, sizeof(T));
}

}  // namespace

TEST_CASE("checkpoint round trip") {
    auto linear = make_linear(7, 3);
    linear.params().values() = testutil::random_vector(linear.params().size(), 1);
    const auto mlp = make_mlp({5, 9, 4, 3}, 2);
    for (const Model* m : {static_cast<const Model*>(&linear), &mlp}) {
        std::istringstream in(serialized(*m), std::ios::binary);
        const Model back = read_checkpoint(in);
        CHECK(back.kind() == m->kind());
        CHECK(back.layout() == m->layout());
        CHECK(back.params().values() == m->params().values());
    }

    const auto dir = testutil::scratch_dir("checkpoint");
    save_checkpoint(dir / "m.ckpt", mlp);
    CHECK(load_checkpoint(dir / "m.ckpt").params().values() == mlp.params().values());
}

TEST_CASE("checkpoint byte layout") {
    const auto m = make_linear(2, 3);
    const std::string bytes = serialized(m);
    // magic, version, kind, layer count, 2 sizes, param count, 9 doubles
    CHECK(bytes.size() == 8 + 4 + 4 + 4 + 2 * 8 + 8 + 9 * 8);
    CHECK(bytes.substr(0, 8) == "LTCLCKPT");
    CHECK(static_cast<unsigned char>(bytes[8]) == 1);
    CHECK(static_cast<unsigned char>(bytes[12]) == 0);
    CHECK(static_cast<unsigned char>(bytes[16]) == 2);
    CHECK(static_cast<unsigned char>(bytes[20]) == 2);
    CHECK(static_cast<unsigned char>(bytes[28]) == 3);
    CHECK(static_cast<unsigned char>(bytes[36]) == 9);
    CHECK(static_cast<unsigned char>(serialized(make_mlp({2, 2, 2}, 1))[12]) == 1);
}

TEST_CASE("checkpoint errors") {
    const std::string good = serialized(make_mlp({3, 4, 2}, 1));

    SUBCASE("truncated") {
        CHECK(failure_of(good.substr(0, 5)) == ParseFailure::Truncated);
        CHECK(failure_of(good.substr(0, 20)) == ParseFailure::Truncated);
        CHECK(failure_of(good.substr(0, good.size() - 1)) == ParseFailure::Truncated);
    }
    SUBCASE("bad magic and version") {
        auto bad = good;
        bad[0] = 'X';
        CHECK(failure_of(bad) == ParseFailure::BadMagic);
        bad = good;
        poke<std::uint32_t>(bad, 8, 7);
        CHECK(failure_of(bad) == ParseFailure::BadMagic);
    }
    SUBCASE("dimension mismatch") {
        auto bad = good;
        poke<std::uint32_t>(bad, 12, 5);
        CHECK(failure_of(bad) == ParseFailure::DimensionMismatch);
        bad = good;
        poke<std::uint32_t>(bad, 12, 0);  // linear kind with a hidden layer
        CHECK(failure_of(bad) == ParseFailure::DimensionMismatch);
        bad = good;
        poke<std::uint64_t>(bad, 20, 0);
        CHECK(failure_of(bad) == ParseFailure::DimensionMismatch);
        bad = good;
        poke<std::uint64_t>(bad, 20 + 3 * 8, 1);
        CHECK(failure_of(bad) == ParseFailure::DimensionMismatch);
        bad = good;
        poke<std::uint32_t>(bad, 16, 1);
        CHECK(failure_of(bad) == ParseFailure::DimensionMismatch);
    }
    SUBCASE("unreadable") {
        try {
            load_checkpoint("/nonexistent/dir/model.ckpt");
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.failure() == ParseFailure::Unreadable);
        }
    }
}
