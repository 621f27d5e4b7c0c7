#include "hybridsim/minibatch.hpp"

#include <algorithm>
#include <limits>

#include "hybridsim/errors.hpp"

namespace hybridsim {

double balance(long act_mb, long kv_mb, const TimingBundle& bundle, int tokens_per_block) {
    if (act_mb < 0 || kv_mb < 0) throw InputError("balance: negative block count");
    const double num = eval(bundle.t_kv_gen, static_cast<double>(act_mb) * tokens_per_block);
    const double den = eval(bundle.t_load_kv, static_cast<double>(kv_mb) * tokens_per_block);
    if (num == 0.0 && den == 0.0) return 1.0;
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return num / den;
}

double cost_fb(long act_mb, long kv_mb, const TimingBundle& bundle, int tokens_per_block) {
    const double b = balance(act_mb, kv_mb, bundle, tokens_per_block);
    if (b == 0.0) return std::numeric_limits<double>::infinity();
    return std::max(b, 1.0 / b);
}

namespace {

void check_fits_alone(const RequestBlocks& r, const PackerConfig& cfg) {
    if (r.act_blocks < 0 || r.kv_blocks < 0)
        throw InputError("form_minibatches: negative block count for request " + r.id);
    if (r.act_blocks > cfg.act_max || r.kv_blocks > cfg.kv_max)
        throw InputError("request too large for GPU buffer capacities: " + r.id);
}

}  // namespace

std::vector<MiniBatch> form_minibatches(const std::vector<RequestBlocks>& requests,
                                        const PackerConfig& cfg, const TimingBundle& bundle,
                                        int tokens_per_block) {
    if (cfg.act_max < 1 || cfg.kv_max < 1)
        throw InputError("form_minibatches: capacities must be >= 1");
    for (const RequestBlocks& r : requests) check_fits_alone(r, cfg);

    std::vector<const RequestBlocks*> order;
    order.reserve(requests.size());
    for (const RequestBlocks& r : requests) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](const RequestBlocks* a, const RequestBlocks* b) {
        const long ta = a->act_blocks + a->kv_blocks;
        const long tb = b->act_blocks + b->kv_blocks;
        if (ta != tb) return ta > tb;
        return a->id < b->id;
    });

    std::vector<bool> used(order.size(), false);
    std::size_t remaining = order.size();
    std::vector<MiniBatch> out;
    while (remaining > 0) {
        MiniBatch mb;
        double fb = std::numeric_limits<double>::infinity();
        bool changed = true;
        while (changed) {
            changed = false;
            for (std::size_t i = 0; i < order.size(); ++i) {
                if (used[i]) continue;
                const RequestBlocks& r = *order[i];
                if (mb.act_mb + r.act_blocks > cfg.act_max || mb.kv_mb + r.kv_blocks > cfg.kv_max)
                    continue;
                const double fb_after =
                    cost_fb(mb.act_mb + r.act_blocks, mb.kv_mb + r.kv_blocks, bundle,
                            tokens_per_block);
                if (!mb.ids.empty() && fb_after > fb) continue;
                mb.ids.push_back(r.id);
                mb.act_mb += r.act_blocks;
                mb.kv_mb += r.kv_blocks;
                fb = fb_after;
                used[i] = true;
                --remaining;
                changed = true;
            }
        }
        out.push_back(std::move(mb));
    }
    return out;
}

namespace {

struct PartitionSearch {
    const std::vector<RequestBlocks>* requests;
    const PackerConfig* cfg;
    const TimingBundle* bundle;
    int tokens_per_block;

    std::vector<MiniBatch> groups;
    std::vector<std::vector<std::size_t>> members;

    bool have_best = false;
    std::size_t best_count = 0;
    double best_mean_fb = 0;
    std::vector<std::vector<std::size_t>> best_members;

    double mean_fb() const {
        double sum = 0;
        for (const MiniBatch& g : groups)
            sum += cost_fb(g.act_mb, g.kv_mb, *bundle, tokens_per_block);
        return sum / static_cast<double>(groups.size());
    }

    void consider() {
        const std::size_t count = groups.size();
        const double mean = mean_fb();
        if (!have_best || count < best_count || (count == best_count && mean < best_mean_fb)) {
            have_best = true;
            best_count = count;
            best_mean_fb = mean;
            best_members = members;
        }
    }

    void search(std::size_t i) {
        if (have_best && groups.size() > best_count) return;  // can only grow
        if (i == requests->size()) {
            consider();
            return;
        }
        const RequestBlocks& r = (*requests)[i];
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (groups[g].act_mb + r.act_blocks > cfg->act_max ||
                groups[g].kv_mb + r.kv_blocks > cfg->kv_max)
                continue;
            groups[g].act_mb += r.act_blocks;
            groups[g].kv_mb += r.kv_blocks;
            members[g].push_back(i);
            search(i + 1);
            members[g].pop_back();
            groups[g].act_mb -= r.act_blocks;
            groups[g].kv_mb -= r.kv_blocks;
        }
        groups.push_back(MiniBatch{{}, r.act_blocks, r.kv_blocks});
        members.push_back({i});
        search(i + 1);
        members.pop_back();
        groups.pop_back();
    }
};

}  // namespace

std::vector<MiniBatch> brute_force_pack(const std::vector<RequestBlocks>& requests,
                                        const PackerConfig& cfg, const TimingBundle& bundle,
                                        int tokens_per_block) {
    if (requests.size() > 10)
        throw InputError("brute_force_pack: refusing more than 10 requests");
    for (const RequestBlocks& r : requests) check_fits_alone(r, cfg);
    if (requests.empty()) return {};

    PartitionSearch s{&requests, &cfg, &bundle, tokens_per_block, {}, {}, false, 0, 0, {}};
    s.search(0);

    std::vector<MiniBatch> out;
    for (const auto& group : s.best_members) {
        MiniBatch mb;
        for (std::size_t i : group) {
            mb.ids.push_back(requests[i].id);
            mb.act_mb += requests[i].act_blocks;
            mb.kv_mb += requests[i].kv_blocks;
        }
        out.push_back(std::move(mb));
    }
    return out;
}

}  // namespace hybridsim
