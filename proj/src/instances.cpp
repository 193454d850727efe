#include "slotalloc/instances.hpp"

#include "slotalloc_embedded_instances.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace slotalloc {

using nlohmann::json;

namespace {

const json& member(const json& obj, const char* key, const std::string& field) {
    if (!obj.is_object()) throw SchemaError(field, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(field.empty() ? key : field + "." + key, "missing");
    return *it;
}

int as_int(const json& v, const std::string& field) {
    if (!v.is_number_integer()) throw SchemaError(field, "expected an integer");
    return v.get<int>();
}

double as_number(const json& v, const std::string& field) {
    if (!v.is_number()) throw SchemaError(field, "expected a number");
    return v.get<double>();
}

std::string as_string(const json& v, const std::string& field) {
    if (!v.is_string()) throw SchemaError(field, "expected a string");
    return v.get<std::string>();
}

QueueSpec parse_queue(const json& q, std::size_t k) {
    const std::string f = "queues[" + std::to_string(k) + "]";
    QueueSpec spec;
    spec.id = as_string(member(q, "id", f), f + ".id");
    const std::string g = "queues[" + spec.id + "]";
    spec.access_target = as_int(member(q, "access_target", g), g + ".access_target");
    spec.wait_cap = as_int(member(q, "wait_cap", g), g + ".wait_cap");
    spec.weight = as_number(member(q, "weight", g), g + ".weight");
    spec.reward = as_number(member(q, "reward", g), g + ".reward");
    const json& dem = member(q, "demands", g);
    if (!dem.is_object()) throw SchemaError(g + ".demands", "expected an object");
    for (auto it = dem.begin(); it != dem.end(); ++it)
        spec.demands[it.key()] = as_int(it.value(), g + ".demands[" + it.key() + "]");
    return spec;
}

InstanceData parse_data(const json& doc, std::vector<std::string>* warnings) {
    InstanceData d;
    const std::string version = as_string(member(doc, "schema_version", ""), "schema_version");
    if (version != kInstanceSchemaVersion) throw SchemaError("schema_version", "unsupported version '" + version + "'");
    d.name = as_string(member(doc, "name", ""), "name");
    if (auto it = doc.find("description"); it != doc.end()) d.description = as_string(*it, "description");
    d.cost_rule = cost_rule_from_string(as_string(member(doc, "cost_rule", ""), "cost_rule"));

    const json& res = member(doc, "resources", "");
    if (!res.is_array()) throw SchemaError("resources", "expected an array");
    for (std::size_t k = 0; k < res.size(); ++k) {
        const std::string f = "resources[" + std::to_string(k) + "]";
        ResourceSpec r;
        r.id = as_string(member(res[k], "id", f), f + ".id");
        r.capacity = as_int(member(res[k], "capacity", f), "resources[" + r.id + "].capacity");
        d.resources.push_back(r);
    }

    const json& qs = member(doc, "queues", "");
    if (!qs.is_array()) throw SchemaError("queues", "expected an array");
    for (std::size_t k = 0; k < qs.size(); ++k) d.queues.push_back(parse_queue(qs[k], k));
    const std::size_t n = d.queues.size();
    auto index_of = [&](const std::string& id, const std::string& field) -> std::size_t {
        for (std::size_t j = 0; j < n; ++j)
            if (d.queues[j].id == id) return j;
        throw SchemaError(field, "unknown queue '" + id + "'");
    };

    d.arrivals.assign(n, 0.0);
    const json& arr = member(doc, "arrivals", "");
    if (!arr.is_object()) throw SchemaError("arrivals", "expected an object");
    for (auto it = arr.begin(); it != arr.end(); ++it)
        d.arrivals[index_of(it.key(), "arrivals")] = as_number(it.value(), "arrivals[" + it.key() + "]");

    const json& tr = member(doc, "transitions", "");
    const json& cols = member(tr, "columns", "transitions");
    if (!cols.is_array()) throw SchemaError("transitions.columns", "expected an array");
    std::vector<std::size_t> col_index;
    std::optional<std::size_t> exit_col;
    std::set<std::size_t> seen;
    for (std::size_t c = 0; c < cols.size(); ++c) {
        const std::string id = as_string(cols[c], "transitions.columns");
        if (id == "Exit") {
            if (exit_col) throw SchemaError("transitions.columns", "duplicate Exit column");
            exit_col = c;
            col_index.push_back(n);
            continue;
        }
        const std::size_t j = index_of(id, "transitions.columns");
        if (!seen.insert(j).second) throw SchemaError("transitions.columns", "duplicate column '" + id + "'");
        col_index.push_back(j);
    }
    if (seen.size() != n) throw SchemaError("transitions.columns", "every queue needs a column");
    if (!exit_col && warnings)
        warnings->push_back("transitions: no Exit column; exit probabilities inferred as 1 - row sum");

    d.transitions.queue.assign(n, std::vector<double>(n, 0.0));
    d.transitions.exit.assign(n, std::nullopt);
    std::vector<bool> have_row(n, false);
    const json& rows = member(tr, "rows", "transitions");
    if (!rows.is_array()) throw SchemaError("transitions.rows", "expected an array");
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::string from = as_string(member(rows[k], "from", "transitions.rows"), "transitions.rows.from");
        const std::string f = "transitions.rows[" + from + "]";
        const json& p = member(rows[k], "p", f);
        if (!p.is_array() || p.size() != cols.size()) throw SchemaError(f, "expected one entry per column");
        std::vector<double> queue_part(n, 0.0);
        std::optional<double> exit;
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (col_index[c] == n) {
                if (!p[c].is_null()) exit = as_number(p[c], f + ".Exit");
            } else {
                queue_part[col_index[c]] = as_number(p[c], f);
            }
        }
        if (from == "Start") {
            if (d.transitions.start) throw SchemaError(f, "duplicate row");
            d.transitions.start = queue_part;
            d.transitions.start_exit = exit;
            continue;
        }
        const std::size_t i = index_of(from, "transitions.rows");
        if (have_row[i]) throw SchemaError(f, "duplicate row");
        have_row[i] = true;
        d.transitions.queue[i] = queue_part;
        d.transitions.exit[i] = exit;
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!have_row[i]) throw SchemaError("transitions.rows[" + d.queues[i].id + "]", "missing");

    if (auto it = doc.find("capacity_overrides"); it != doc.end()) {
        if (!it->is_array()) throw SchemaError("capacity_overrides", "expected an array");
        for (const json& o : *it) {
            const int period = as_int(member(o, "period", "capacity_overrides"), "capacity_overrides.period");
            const std::string f = "capacity_overrides[" + std::to_string(period) + "]";
            std::vector<int> caps;
            for (const auto& r : d.resources) caps.push_back(r.capacity);
            const json& c = member(o, "capacities", f);
            if (!c.is_object()) throw SchemaError(f + ".capacities", "expected an object");
            for (auto jt = c.begin(); jt != c.end(); ++jt) {
                std::size_t r = d.resources.size();
                for (std::size_t k = 0; k < d.resources.size(); ++k)
                    if (d.resources[k].id == jt.key()) r = k;
                if (r == d.resources.size()) throw SchemaError(f, "unknown resource '" + jt.key() + "'");
                caps[r] = as_int(jt.value(), f + "." + jt.key());
            }
            if (!d.capacity_overrides.emplace(period, caps).second) throw SchemaError(f, "duplicate period");
        }
    }
    return d;
}

json number_or_int(double v) {
    if (v == static_cast<double>(static_cast<long long>(v)) && std::abs(v) < 1e15) return static_cast<long long>(v);
    return v;
}

} // namespace

Instance parse_instance(std::string_view text, std::vector<std::string>* warnings) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw SchemaError("<document>", std::string("parse error: ") + e.what());
    }
    return Instance(parse_data(doc, warnings));
}

std::string serialize_instance(const Instance& inst) {
    const InstanceData& d = inst.data();
    json doc;
    doc["schema_version"] = kInstanceSchemaVersion;
    doc["name"] = d.name;
    if (!d.description.empty()) doc["description"] = d.description;
    doc["cost_rule"] = to_string(d.cost_rule);
    doc["resources"] = json::array();
    for (const auto& r : d.resources) doc["resources"].push_back({{"id", r.id}, {"capacity", r.capacity}});
    doc["queues"] = json::array();
    for (const auto& q : d.queues) {
        json dem = json::object();
        for (const auto& [rid, z] : q.demands) dem[rid] = z;
        doc["queues"].push_back({{"id", q.id},
                                 {"access_target", q.access_target},
                                 {"wait_cap", q.wait_cap},
                                 {"weight", number_or_int(q.weight)},
                                 {"reward", number_or_int(q.reward)},
                                 {"demands", dem}});
    }
    json arr = json::object();
    for (std::size_t j = 0; j < d.queues.size(); ++j) arr[d.queues[j].id] = number_or_int(d.arrivals[j]);
    doc["arrivals"] = arr;

    bool any_exit = d.transitions.start_exit.has_value();
    for (const auto& e : d.transitions.exit) any_exit = any_exit || e.has_value();
    json cols = json::array();
    for (const auto& q : d.queues) cols.push_back(q.id);
    if (any_exit) cols.push_back("Exit");
    json rows = json::array();
    auto row = [&](const std::string& from, const std::vector<double>& p, const std::optional<double>& e) {
        json vals = json::array();
        for (double v : p) vals.push_back(number_or_int(v));
        if (any_exit) vals.push_back(e ? number_or_int(*e) : json(nullptr));
        rows.push_back({{"from", from}, {"p", vals}});
    };
    if (d.transitions.start) row("Start", *d.transitions.start, d.transitions.start_exit);
    for (std::size_t i = 0; i < d.queues.size(); ++i) row(d.queues[i].id, d.transitions.queue[i], d.transitions.exit[i]);
    doc["transitions"] = {{"columns", cols}, {"rows", rows}};

    if (!d.capacity_overrides.empty()) {
        json ov = json::array();
        for (const auto& [period, caps] : d.capacity_overrides) {
            json c = json::object();
            for (std::size_t r = 0; r < caps.size(); ++r) c[d.resources[r].id] = caps[r];
            ov.push_back({{"period", period}, {"capacities", c}});
        }
        doc["capacity_overrides"] = ov;
    }
    return doc.dump(2) + "\n";
}

Instance load_instance(const std::filesystem::path& path, std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw SchemaError("<document>", "cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_instance(buf.str(), warnings);
}

void save_instance(const Instance& inst, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << serialize_instance(inst);
}

Instance build_small() { return parse_instance(embedded::kSmallInstance); }
Instance build_large() { return parse_instance(embedded::kLargeInstance); }
Instance build_smk() { return parse_instance(embedded::kSmkInstance); }

Instance builtin_instance(std::string_view name) {
    if (name == "small") return build_small();
    if (name == "large") return build_large();
    if (name == "smk") return build_smk();
    throw SchemaError("instance", "unknown built-in instance '" + std::string(name) + "'");
}

Instance resolve_instance(const std::string& ref, std::vector<std::string>* warnings) {
    if (ref == "small" || ref == "large" || ref == "smk") return builtin_instance(ref);
    return load_instance(ref, warnings);
}

} // namespace slotalloc
