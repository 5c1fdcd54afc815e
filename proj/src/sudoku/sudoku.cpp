#include "hrmlab/sudoku/sudoku.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace hrmlab::sudoku {

namespace {

int box_side(int side) { return side == 9 ? 3 : 2; }

bool is_permutation_of(const std::vector<int>& perm, int lo, int n) {
    if (static_cast<int>(perm.size()) != n) return false;
    std::vector<bool> seen(static_cast<size_t>(n), false);
    for (int v : perm) {
        if (v < lo || v >= lo + n || seen[static_cast<size_t>(v - lo)]) return false;
        seen[static_cast<size_t>(v - lo)] = true;
    }
    return true;
}

// Candidate mask bookkeeping for the solver: rows/cols/boxes as bitsets.
struct Board {
    int side;
    int bs;
    Grid cells;
    std::vector<uint32_t> row_used, col_used, box_used;

    explicit Board(int side_) : side(side_), bs(box_side(side_)) {
        cells.assign(static_cast<size_t>(side * side), 0);
        row_used.assign(static_cast<size_t>(side), 0);
        col_used.assign(static_cast<size_t>(side), 0);
        box_used.assign(static_cast<size_t>(side), 0);
    }

    int box_of(int r, int c) const { return (r / bs) * bs + c / bs; }

    bool can_place(int r, int c, int v) const {
        uint32_t bit = 1u << v;
        return !(row_used[r] & bit) && !(col_used[c] & bit) && !(box_used[box_of(r, c)] & bit);
    }

    void place(int r, int c, int v) {
        uint32_t bit = 1u << v;
        cells[static_cast<size_t>(r * side + c)] = v;
        row_used[r] |= bit;
        col_used[c] |= bit;
        box_used[box_of(r, c)] |= bit;
    }

    void remove(int r, int c, int v) {
        uint32_t bit = 1u << v;
        cells[static_cast<size_t>(r * side + c)] = 0;
        row_used[r] &= ~bit;
        col_used[c] &= ~bit;
        box_used[box_of(r, c)] &= ~bit;
    }
};

bool fill_from(Board& b, int idx) {
    int n = b.side * b.side;
    while (idx < n && b.cells[static_cast<size_t>(idx)] != 0) ++idx;
    if (idx >= n) return true;
    int r = idx / b.side, c = idx % b.side;
    for (int v = 1; v <= b.side; ++v) {
        if (!b.can_place(r, c, v)) continue;
        b.place(r, c, v);
        if (fill_from(b, idx + 1)) return true;
        b.remove(r, c, v);
    }
    return false;
}

// Same row-major sweep, but candidate digits are tried in a freshly shuffled
// order at every cell so generated grids vary beyond digit relabeling.
bool fill_random(Board& b, int idx, Rng& rng) {
    int n = b.side * b.side;
    while (idx < n && b.cells[static_cast<size_t>(idx)] != 0) ++idx;
    if (idx >= n) return true;
    int r = idx / b.side, c = idx % b.side;
    std::vector<int> order(static_cast<size_t>(b.side));
    std::iota(order.begin(), order.end(), 1);
    std::shuffle(order.begin(), order.end(), rng);
    for (int v : order) {
        if (!b.can_place(r, c, v)) continue;
        b.place(r, c, v);
        if (fill_random(b, idx + 1, rng)) return true;
        b.remove(r, c, v);
    }
    return false;
}

void check_cells(const Grid& grid, int side, const char* op) {
    if (static_cast<int>(grid.size()) != side * side)
        throw ShapeError(strcat(op, ": grid has ", grid.size(), " cells, expected ", side * side));
    for (int v : grid)
        if (v < 0 || v > side) throw ValueError(strcat(op, ": cell value ", v, " outside 0..", side));
}

} // namespace

void require_side(int side) {
    if (side != 4 && side != 9) throw ValueError(strcat("sudoku: side must be 4 or 9, got ", side));
}

bool check_valid(const Grid& grid, int side) {
    require_side(side);
    check_cells(grid, side, "check_valid");
    int bs = box_side(side);
    auto dup_in = [&](auto cell_at) {
        uint32_t used = 0;
        for (int i = 0; i < side; ++i) {
            int v = cell_at(i);
            if (v == 0) continue;
            uint32_t bit = 1u << v;
            if (used & bit) return true;
            used |= bit;
        }
        return false;
    };
    for (int r = 0; r < side; ++r)
        if (dup_in([&](int i) { return grid[static_cast<size_t>(r * side + i)]; })) return false;
    for (int c = 0; c < side; ++c)
        if (dup_in([&](int i) { return grid[static_cast<size_t>(i * side + c)]; })) return false;
    for (int br = 0; br < bs; ++br)
        for (int bc = 0; bc < bs; ++bc)
            if (dup_in([&](int i) {
                    int r = br * bs + i / bs, c = bc * bs + i % bs;
                    return grid[static_cast<size_t>(r * side + c)];
                }))
                return false;
    return true;
}

std::optional<Grid> solve_backtracking(const Grid& givens, int side) {
    require_side(side);
    check_cells(givens, side, "solve_backtracking");
    if (!check_valid(givens, side))
        throw ValueError("solve_backtracking: givens violate a row/column/box constraint");
    Board b(side);
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            int v = givens[static_cast<size_t>(r * side + c)];
            if (v != 0) b.place(r, c, v);
        }
    if (!fill_from(b, 0)) return std::nullopt;
    return b.cells;
}

std::vector<PuzzleInstance> generate_dataset(int count, int side, int blanks, uint64_t seed) {
    require_side(side);
    if (blanks < 0 || blanks >= side * side)
        throw ValueError(strcat("generate_dataset: blanks ", blanks, " must be in [0, ", side * side, ")"));
    Rng rng(seed);
    std::vector<PuzzleInstance> out;
    out.reserve(static_cast<size_t>(count));
    std::vector<int> cells(static_cast<size_t>(side * side));
    std::iota(cells.begin(), cells.end(), 0);
    for (int i = 0; i < count; ++i) {
        Board b(side);
        fill_random(b, 0, rng); // a full grid always exists
        PuzzleInstance p;
        p.side = side;
        p.solution = b.cells;
        p.givens = b.cells;
        std::shuffle(cells.begin(), cells.end(), rng);
        for (int k = 0; k < blanks; ++k) p.givens[static_cast<size_t>(cells[static_cast<size_t>(k)])] = 0;
        out.push_back(std::move(p));
    }
    return out;
}

PuzzleInstance augment(const PuzzleInstance& p, const std::vector<int>& digit_perm, bool transpose,
                       const std::vector<int>& band_perm, const std::vector<int>& stack_perm) {
    int side = p.side;
    require_side(side);
    int bs = box_side(side);
    if (!is_permutation_of(digit_perm, 1, side))
        throw ValueError("augment: digit_perm is not a permutation of 1..side");
    if (!is_permutation_of(band_perm, 0, bs)) throw ValueError("augment: band_perm is not a permutation");
    if (!is_permutation_of(stack_perm, 0, bs)) throw ValueError("augment: stack_perm is not a permutation");

    auto apply = [&](const Grid& g) {
        Grid tr = g;
        if (transpose)
            for (int r = 0; r < side; ++r)
                for (int c = 0; c < side; ++c)
                    tr[static_cast<size_t>(r * side + c)] = g[static_cast<size_t>(c * side + r)];
        Grid out(static_cast<size_t>(side * side));
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c) {
                int sr = band_perm[static_cast<size_t>(r / bs)] * bs + r % bs;
                int sc = stack_perm[static_cast<size_t>(c / bs)] * bs + c % bs;
                int v = tr[static_cast<size_t>(sr * side + sc)];
                out[static_cast<size_t>(r * side + c)] = v == 0 ? 0 : digit_perm[static_cast<size_t>(v - 1)];
            }
        return out;
    };

    PuzzleInstance q;
    q.side = side;
    q.givens = apply(p.givens);
    q.solution = apply(p.solution);
    return q;
}

AugmentParams random_augment_params(int side, Rng& rng) {
    require_side(side);
    AugmentParams a;
    a.digit_perm.resize(static_cast<size_t>(side));
    std::iota(a.digit_perm.begin(), a.digit_perm.end(), 1);
    std::shuffle(a.digit_perm.begin(), a.digit_perm.end(), rng);
    a.transpose = (rng() & 1) != 0;
    int bs = box_side(side);
    a.band_perm.resize(static_cast<size_t>(bs));
    std::iota(a.band_perm.begin(), a.band_perm.end(), 0);
    std::shuffle(a.band_perm.begin(), a.band_perm.end(), rng);
    a.stack_perm.resize(static_cast<size_t>(bs));
    std::iota(a.stack_perm.begin(), a.stack_perm.end(), 0);
    std::shuffle(a.stack_perm.begin(), a.stack_perm.end(), rng);
    return a;
}

EncodedExample encode(const PuzzleInstance& p) {
    EncodedExample e;
    e.input.assign(p.givens.begin(), p.givens.end());
    e.target.assign(p.solution.begin(), p.solution.end());
    return e;
}

PuzzleInstance decode(const EncodedExample& e, int side) {
    require_side(side);
    PuzzleInstance p;
    p.side = side;
    p.givens.assign(e.input.begin(), e.input.end());
    p.solution.assign(e.target.begin(), e.target.end());
    return p;
}

double token_accuracy(std::span<const int32_t> pred, std::span<const int32_t> target) {
    if (pred.size() != target.size())
        throw ShapeError(strcat("token_accuracy: length mismatch ", pred.size(), " vs ", target.size()));
    if (pred.empty()) throw ValueError("token_accuracy: empty sequences");
    size_t hits = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == target[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

int exact_accuracy(std::span<const int32_t> pred, std::span<const int32_t> target) {
    return token_accuracy(pred, target) == 1.0 ? 1 : 0;
}

namespace {

int side_from_len(size_t len, int line_no) {
    if (len == 16) return 4;
    if (len == 81) return 9;
    throw ParseError(strcat("dataset line ", line_no, ": field length ", len, " is not 16 or 81"));
}

Grid field_to_grid(const std::string& f, int side, int line_no, bool allow_blank) {
    Grid g;
    g.reserve(f.size());
    for (char ch : f) {
        int v;
        if (ch == '.' || ch == '0')
            v = 0;
        else if (ch >= '1' && ch <= '9')
            v = ch - '0';
        else
            throw ParseError(strcat("dataset line ", line_no, ": invalid character '", ch, "'"));
        if (v > side) throw ParseError(strcat("dataset line ", line_no, ": digit ", v, " exceeds side ", side));
        if (v == 0 && !allow_blank)
            throw ParseError(strcat("dataset line ", line_no, ": blank cell in solution field"));
        g.push_back(v);
    }
    return g;
}

bool looks_like_record(const std::string& first_field) {
    if (first_field.empty()) return false;
    for (char ch : first_field)
        if (!(ch == '.' || (ch >= '0' && ch <= '9'))) return false;
    return true;
}

} // namespace

std::vector<PuzzleInstance> parse_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(strcat("cannot open dataset file ", path));
    std::vector<PuzzleInstance> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError(strcat("dataset line ", line_no, ": expected 'givens,solution'"));
        std::string g = line.substr(0, comma), s = line.substr(comma + 1);
        if (line_no == 1 && !looks_like_record(g)) continue; // header
        int side = side_from_len(g.size(), line_no);
        if (s.size() != g.size())
            throw ParseError(strcat("dataset line ", line_no, ": field lengths differ (", g.size(), " vs ",
                                    s.size(), ")"));
        PuzzleInstance p;
        p.side = side;
        p.givens = field_to_grid(g, side, line_no, true);
        p.solution = field_to_grid(s, side, line_no, false);
        if (!check_valid(p.solution, side))
            throw ParseError(strcat("dataset line ", line_no, ": solution violates a constraint"));
        if (!check_valid(p.givens, side))
            throw ParseError(strcat("dataset line ", line_no, ": givens violate a constraint"));
        for (size_t i = 0; i < p.givens.size(); ++i)
            if (p.givens[i] != 0 && p.givens[i] != p.solution[i])
                throw ParseError(strcat("dataset line ", line_no, ": solution does not extend givens at cell ", i));
        if (!out.empty() && out.front().side != side)
            throw ParseError(strcat("dataset line ", line_no, ": mixed grid sizes in one file"));
        out.push_back(std::move(p));
    }
    return out;
}

void write_dataset_file(const std::string& path, const std::vector<PuzzleInstance>& items) {
    std::ofstream out(path);
    if (!out) throw IoError(strcat("cannot write dataset file ", path));
    out << "givens,solution\n";
    for (const auto& p : items) out << grid_to_string(p.givens) << ',' << grid_to_string(p.solution) << '\n';
    if (!out) throw IoError(strcat("write failed for ", path));
}

std::string grid_to_string(const Grid& g) {
    std::string s;
    s.reserve(g.size());
    for (int v : g) s.push_back(static_cast<char>('0' + v));
    return s;
}

} // namespace hrmlab::sudoku
