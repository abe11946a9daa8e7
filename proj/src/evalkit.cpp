#include "geoscene/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geoscene/errors.hpp"

namespace geoscene {

std::optional<double> attention_agreement(const float* a, const float* b, size_t n) {
    if (n < 2) return std::nullopt;
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += double(a[i]);
        mb += double(b[i]);
    }
    ma /= double(n);
    mb /= double(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = double(a[i]) - ma, db = double(b[i]) - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

std::optional<double> attention_agreement(const CorrespondenceMask& a,
                                          const CorrespondenceMask& b) {
    if (a.h != b.h || a.w != b.w)
        throw dim_error("attention_agreement: grid dims differ");
    return attention_agreement(a.v.data(), b.v.data(), a.v.size());
}

double scene_error(const Image& generated, const Image& ground_truth,
                   const std::vector<uint8_t>& entity_footprint, double cap) {
    if (generated.h != ground_truth.h || generated.w != ground_truth.w)
        throw dim_error("scene_error: image dims differ");
    if (entity_footprint.size() != size_t(generated.h) * generated.w)
        throw dim_error("scene_error: footprint size mismatch");
    double sq = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < entity_footprint.size(); ++i) {
        if (entity_footprint[i]) continue;
        for (int c = 0; c < 3; ++c) {
            const double d = double(generated.data[i * 3 + size_t(c)]) -
                             double(ground_truth.data[i * 3 + size_t(c)]);
            sq += d * d;
        }
        ++count;
    }
    if (count == 0) throw data_error("scene_error: footprint covers every pixel");
    const double mse = sq / double(count * 3);
    if (mse <= 0.0) return cap;
    return std::min(cap, 20.0 * std::log10(255.0 / std::sqrt(mse)));
}

namespace {

struct Blob {
    size_t count = 0;
    double cx = 0, cy = 0;
    int min_x = 0, max_x = 0, min_y = 0, max_y = 0;
};

/// pixels whose nearest palette color is `color` and lies within distance 40
Blob find_blob(const Image& img, int color) {
    Blob blob;
    const double threshold_sq = 40.0 * 40.0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const uint8_t* q = img.px(y, x);
            int best = -1;
            double best_d = threshold_sq;
            for (int c = 0; c < kNumColors; ++c) {
                const auto rgb = palette_rgb(c);
                const double dr = double(q[0]) - rgb[0], dg = double(q[1]) - rgb[1],
                             db = double(q[2]) - rgb[2];
                const double dist = dr * dr + dg * dg + db * db;
                if (dist <= best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            if (best != color) continue;
            if (blob.count == 0) {
                blob.min_x = blob.max_x = x;
                blob.min_y = blob.max_y = y;
            } else {
                blob.min_x = std::min(blob.min_x, x);
                blob.max_x = std::max(blob.max_x, x);
                blob.min_y = std::min(blob.min_y, y);
                blob.max_y = std::max(blob.max_y, y);
            }
            blob.cx += x;
            blob.cy += y;
            ++blob.count;
        }
    if (blob.count > 0) {
        blob.cx /= double(blob.count);
        blob.cy /= double(blob.count);
    }
    return blob;
}

} // namespace

RelationResult relation_accuracy(const Image& generated, const EntitySpec& entity,
                                 const SceneSpec& scene) {
    if (entity.anchor < 0 || entity.anchor >= int(scene.objects.size()))
        throw data_error("relation_accuracy: anchor index out of range");
    const int anchor_color = scene.objects[size_t(entity.anchor)].color;
    const Blob e = find_blob(generated, entity.color);
    const Blob a = find_blob(generated, anchor_color);
    RelationResult out;
    if (e.count == 0 || a.count == 0) return out; // detection failure
    out.detected = true;
    switch (entity.relation) {
        case 0: out.correct = e.cx < a.cx; break;
        case 1: out.correct = e.cx > a.cx; break;
        case 2: out.correct = e.cy < a.cy; break;
        case 3: out.correct = e.cy > a.cy; break;
        case 4: {
            const double a_h = double(a.max_y - a.min_y + 1);
            const bool adjacent = std::abs(e.cy - double(a.min_y)) <= a_h / 4.0;
            const bool overlap = e.cx >= double(a.min_x) && e.cx <= double(a.max_x);
            out.correct = adjacent && overlap;
            break;
        }
        default:
            throw data_error("relation_accuracy: relation id " +
                             std::to_string(entity.relation));
    }
    return out;
}

namespace {

struct PairVotes {
    std::set<std::string> annotators;
    std::map<std::string, int> method_votes; // method -> selected count
    std::set<std::string> methods;
};

std::map<std::string, PairVotes> group_votes(const std::vector<VoteRecord>& votes) {
    std::map<std::string, PairVotes> pairs;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& v : votes) {
        if (!seen.insert({v.pair_id, v.annotator_id, v.method}).second)
            throw data_error("votes: duplicate record for pair " + v.pair_id +
                             ", annotator " + v.annotator_id + ", method " + v.method);
        auto& p = pairs[v.pair_id];
        p.annotators.insert(v.annotator_id);
        p.methods.insert(v.method);
        if (v.selected) p.method_votes[v.method] += 1;
    }
    for (const auto& [id, p] : pairs)
        if (p.annotators.size() != 3)
            throw data_error("votes: pair " + id + " has " +
                             std::to_string(p.annotators.size()) +
                             " annotators, expected 3");
    return pairs;
}

} // namespace

VoteAggregate aggregate_votes(const std::vector<VoteRecord>& votes, double alpha) {
    if (!(alpha > 0)) throw param_error("aggregate_votes: alpha must be > 0");
    const auto pairs = group_votes(votes);
    std::map<std::string, double> totals;
    std::set<std::string> all_methods;
    VoteAggregate out;
    for (const auto& [id, p] : pairs) {
        for (const auto& m : p.methods) all_methods.insert(m);
        std::vector<std::string> retained;
        for (const auto& [method, n] : p.method_votes)
            if (n >= 2) retained.push_back(method);
        if (retained.empty()) {
            ++out.pairs_skipped;
            continue;
        }
        ++out.pairs_used;
        const double w = 1.0 / std::pow(double(retained.size()), alpha);
        for (const auto& m : retained) totals[m] += w;
    }
    double sum = 0.0;
    for (const auto& [m, t] : totals) sum += t;
    for (const auto& m : all_methods) {
        const double t = totals.count(m) ? totals[m] : 0.0;
        out.percentages.emplace_back(m, sum > 0 ? 100.0 * t / sum : 0.0);
    }
    return out;
}

std::map<std::string, std::string> derive_preferences(const std::vector<VoteRecord>& votes) {
    std::map<std::string, std::string> prefs;
    for (const auto& [id, p] : group_votes(votes)) {
        std::vector<std::string> majority;
        for (const auto& [method, n] : p.method_votes)
            if (n >= 2) majority.push_back(method);
        if (majority.size() == 1) prefs[id] = majority[0];
    }
    return prefs;
}

double pairwise_accuracy(const ScoreTable& scores,
                         const std::map<std::string, std::string>& preferences) {
    if (preferences.empty()) throw data_error("pairwise_accuracy: no preference pairs");
    int agree = 0;
    for (const auto& [pair_id, winner] : preferences) {
        std::vector<std::pair<std::string, double>> row;
        for (const auto& [key, score] : scores.scores)
            if (key.first == pair_id) row.emplace_back(key.second, score);
        if (row.empty())
            throw data_error("pairwise_accuracy: no scores for pair " + pair_id);
        bool winner_scored = false;
        for (const auto& [m, s] : row) winner_scored = winner_scored || m == winner;
        if (!winner_scored)
            throw data_error("pairwise_accuracy: pair " + pair_id +
                             " lacks a score for preferred method " + winner);
        double best = row[0].second;
        for (const auto& [m, s] : row) best = std::max(best, s);
        std::vector<std::string> argmax;
        for (const auto& [m, s] : row)
            if (s == best) argmax.push_back(m);
        if (argmax.size() == 1 && argmax[0] == winner) ++agree;
    }
    return 100.0 * double(agree) / double(preferences.size());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::ifstream open_csv(const std::filesystem::path& path, const std::string& header) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open " + path.string());
    std::string first;
    if (!std::getline(is, first))
        throw format_error(path.string() + ": empty file");
    if (!first.empty() && first.back() == '\r') first.pop_back();
    if (first != header)
        throw format_error(path.string() + ": expected header \"" + header +
                           "\", got \"" + first + "\"");
    return is;
}

} // namespace

std::vector<VoteRecord> read_votes_csv(const std::filesystem::path& path) {
    auto is = open_csv(path, "pair_id,annotator_id,method,selected");
    std::vector<VoteRecord> out;
    std::string line;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4)
            throw format_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 4 fields");
        if (f[3] != "0" && f[3] != "1")
            throw format_error(path.string() + ":" + std::to_string(lineno) +
                               ": selected must be 0 or 1");
        out.push_back({f[0], f[1], f[2], f[3] == "1"});
    }
    return out;
}

ScoreTable read_scores_csv(const std::filesystem::path& path) {
    auto is = open_csv(path, "pair_id,method,score");
    ScoreTable t;
    std::string line;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 3)
            throw format_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 3 fields");
        double score = 0;
        try {
            score = std::stod(f[2]);
        } catch (const std::exception&) {
            throw format_error(path.string() + ":" + std::to_string(lineno) +
                               ": score is not a number");
        }
        if (!std::isfinite(score))
            throw data_error(path.string() + ":" + std::to_string(lineno) +
                             ": score must be finite");
        if (!t.scores.emplace(std::make_pair(f[0], f[1]), score).second)
            throw data_error(path.string() + ":" + std::to_string(lineno) +
                             ": duplicate score for pair " + f[0] + ", method " + f[1]);
    }
    return t;
}

std::map<std::string, std::string> read_preferences_csv(const std::filesystem::path& path) {
    auto is = open_csv(path, "pair_id,method");
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 2)
            throw format_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 2 fields");
        if (!out.emplace(f[0], f[1]).second)
            throw data_error(path.string() + ":" + std::to_string(lineno) +
                             ": duplicate preference for pair " + f[0]);
    }
    return out;
}

void write_report_json(const std::filesystem::path& path, const AgreementReport& r) {
    nlohmann::json j;
    j["preferences"] = nlohmann::json::object();
    for (const auto& [m, pct] : r.preference_pct) j["preferences"][m] = pct;
    j["pairwise_accuracy"] = nlohmann::json::object();
    for (const auto& [m, pct] : r.pairwise_pct) j["pairwise_accuracy"][m] = pct;
    j["valid_pairs"] = r.valid_pairs;
    j["skipped_pairs"] = r.skipped_pairs;
    std::ofstream os(path);
    if (!os) throw data_error("cannot open " + path.string() + " for writing");
    os << j.dump(2) << "\n";
}

void write_report_csv(const std::filesystem::path& path, const AgreementReport& r) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot open " + path.string() + " for writing");
    os << "kind,name,value\n";
    os.precision(17);
    for (const auto& [m, pct] : r.preference_pct)
        os << "preference_pct," << m << "," << pct << "\n";
    for (const auto& [m, pct] : r.pairwise_pct)
        os << "pairwise_accuracy," << m << "," << pct << "\n";
    os << "valid_pairs,," << r.valid_pairs << "\n";
    os << "skipped_pairs,," << r.skipped_pairs << "\n";
}

} // namespace geoscene
