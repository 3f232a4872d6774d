#include "signglyph/model.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "signglyph/hash.hpp"

namespace signglyph {

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(input_side, "input_side");
  positive(input_channels, "input_channels");
  for (std::size_t f : conv_filters) positive(f, "conv filter count");
  for (std::size_t w : dense_widths) positive(w, "dense width");
  positive(pool_side, "pool_side");
  if (kernel_side == 0 || kernel_side % 2 == 0) {
    throw ConfigError("kernel_side must be odd for same padding, got " +
                      std::to_string(kernel_side));
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  for (double rate : {conv_dropout, dense_dropout}) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("dropout rates must lie in [0, 1), got " + std::to_string(rate));
    }
  }
  if (!class_names.empty() && class_names.size() != num_classes) {
    throw ConfigError("class_names lists " + std::to_string(class_names.size()) +
                      " names for " + std::to_string(num_classes) + " classes");
  }
  for (const auto& name : class_names) {
    if (name.empty() || name.find_first_of(",\n\r\t") != std::string::npos) {
      throw ConfigError("class name '" + name + "' is empty or contains a separator");
    }
  }
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <std::size_t N>
std::string join_sizes(const std::array<std::size_t, N>& values) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string current;
  std::istringstream in(text);
  while (std::getline(in, current, sep)) parts.push_back(current);
  return parts;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("config key '" + key + "': not an unsigned integer: '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("config key '" + key + "': not a number: '" + text + "'");
  }
  return v;
}

template <std::size_t N>
std::array<std::size_t, N> parse_sizes(const std::string& key, const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != N) {
    throw FormatError("config key '" + key + "' needs " + std::to_string(N) + " values");
  }
  std::array<std::size_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_uint(key, parts[i]);
  return out;
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "input_side=" << input_side << '\n'
      << "input_channels=" << input_channels << '\n'
      << "conv_filters=" << join_sizes(conv_filters) << '\n'
      << "kernel_side=" << kernel_side << '\n'
      << "pool_side=" << pool_side << '\n'
      << "conv_dropout=" << format_double(conv_dropout) << '\n'
      << "dense_dropout=" << format_double(dense_dropout) << '\n'
      << "dense_widths=" << join_sizes(dense_widths) << '\n'
      << "num_classes=" << num_classes << '\n'
      << "seed=" << seed << '\n'
      << "class_names=";
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (i) out << ',';
    out << class_names[i];
  }
  out << '\n';
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  for (const std::string& line : split(text, '\n')) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "input_side") cfg.input_side = parse_uint(key, value);
    else if (key == "input_channels") cfg.input_channels = parse_uint(key, value);
    else if (key == "conv_filters") cfg.conv_filters = parse_sizes<3>(key, value);
    else if (key == "kernel_side") cfg.kernel_side = parse_uint(key, value);
    else if (key == "pool_side") cfg.pool_side = parse_uint(key, value);
    else if (key == "conv_dropout") cfg.conv_dropout = parse_double(key, value);
    else if (key == "dense_dropout") cfg.dense_dropout = parse_double(key, value);
    else if (key == "dense_widths") cfg.dense_widths = parse_sizes<2>(key, value);
    else if (key == "num_classes") cfg.num_classes = parse_uint(key, value);
    else if (key == "seed") cfg.seed = parse_uint(key, value);
    else if (key == "class_names") cfg.class_names = value.empty() ? std::vector<std::string>{} : split(value, ',');
    else throw FormatError("unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- geometry

std::vector<LayerTrace> trace_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<LayerTrace> trace;
  Shape shape{cfg.input_channels, cfg.input_side, cfg.input_side};
  const std::size_t pad = cfg.kernel_side / 2;

  auto push = [&](std::string name, std::string kind, Shape out) {
    trace.push_back({std::move(name), std::move(kind), out});
    shape = std::move(out);
  };
  auto fail = [&](const std::string& name, const std::string& why) -> void {
    throw ConfigError("layer '" + name + "' does not fit input " + shape_to_string(shape) + ": " +
                      why);
  };

  for (std::size_t block = 0; block < 3; ++block) {
    const std::string b = std::to_string(block + 1);
    for (std::size_t k = 1; k <= 2; ++k) {
      const std::string name = "conv" + b + "_" + std::to_string(k);
      try {
        push(name, "conv",
             {cfg.conv_filters[block],
              window_output_extent(shape[1], cfg.kernel_side, 1, pad),
              window_output_extent(shape[2], cfg.kernel_side, 1, pad)});
      } catch (const ShapeError& e) {
        fail(name, e.what());
      }
      push("relu" + b + "_" + std::to_string(k), "relu", shape);
    }
    const std::string pool = "pool" + b;
    if (shape[1] < cfg.pool_side || shape[1] % cfg.pool_side != 0) {
      fail(pool, "side " + std::to_string(shape[1]) + " is not a positive multiple of pool " +
                     std::to_string(cfg.pool_side));
    }
    push(pool, "maxpool", {shape[0], shape[1] / cfg.pool_side, shape[2] / cfg.pool_side});
    push("drop" + b, "dropout", shape);
  }
  push("flatten", "flatten", {shape_numel(shape)});
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string b = std::to_string(i + 1);
    push("fc" + b, "dense", {cfg.dense_widths[i]});
    push("relu_fc" + b, "relu", shape);
    push("drop_fc" + b, "dropout", shape);
  }
  push("output", "dense", {cfg.num_classes});
  push("softmax", "softmax", shape);
  return trace;
}

std::size_t count_parameters(const ModelConfig& cfg) {
  const auto trace = trace_shapes(cfg);
  std::size_t total = 0;
  std::size_t channels = cfg.input_channels;
  std::size_t features = 0;
  for (const auto& layer : trace) {
    if (layer.kind == "conv") {
      total += layer.output[0] * channels * cfg.kernel_side * cfg.kernel_side + layer.output[0];
      channels = layer.output[0];
    } else if (layer.kind == "flatten") {
      features = layer.output[0];
    } else if (layer.kind == "dense") {
      total += features * layer.output[0] + layer.output[0];
      features = layer.output[0];
    }
  }
  return total;
}

// ---------------------------------------------------------------- model

namespace {

template <typename T>
BasicTensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(normal(rng));
  return t;
}

std::uint64_t dropout_seed(std::uint64_t seed, std::size_t layer_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(layer_index), 0xd50u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  trace_ = trace_shapes(config_);
  std::mt19937_64 rng(config_.seed);
  const std::size_t pad = config_.kernel_side / 2;
  std::size_t channels = config_.input_channels;
  std::size_t features = 0;
  for (std::size_t i = 0; i < trace_.size(); ++i) {
    const LayerTrace& t = trace_[i];
    if (t.kind == "conv") {
      const std::size_t k = config_.kernel_side;
      ConvParams<T> p;
      p.weights = he_normal<T>({t.output[0], channels, k, k}, channels * k * k, rng);
      p.bias = BasicTensor<T>({t.output[0]});
      p.stride = 1;
      p.pad = pad;
      layers_.push_back(std::make_unique<Conv2d<T>>(std::move(p)));
      channels = t.output[0];
    } else if (t.kind == "relu") {
      layers_.push_back(std::make_unique<Relu<T>>());
    } else if (t.kind == "maxpool") {
      layers_.push_back(std::make_unique<MaxPool2d<T>>(config_.pool_side, config_.pool_side));
    } else if (t.kind == "dropout") {
      const double rate = t.output.size() == 3 ? config_.conv_dropout : config_.dense_dropout;
      layers_.push_back(std::make_unique<Dropout<T>>(rate, dropout_seed(config_.seed, i)));
    } else if (t.kind == "flatten") {
      layers_.push_back(std::make_unique<Flatten<T>>());
      features = t.output[0];
    } else if (t.kind == "dense") {
      DenseParams<T> p;
      p.weights = he_normal<T>({features, t.output[0]}, features, rng);
      p.bias = BasicTensor<T>({t.output[0]});
      layers_.push_back(std::make_unique<Dense<T>>(std::move(p)));
      features = t.output[0];
    } else if (t.kind == "softmax") {
      layers_.push_back(std::make_unique<Softmax<T>>());
    }
  }
}

template <typename T>
BasicTensor<T> Model<T>::forward(const BasicTensor<T>& batch, Mode mode) {
  const Shape4 in = Shape4::of(batch);
  if (in.c != config_.input_channels || in.h != config_.input_side || in.w != config_.input_side) {
    throw ShapeError("model expects [n," + std::to_string(config_.input_channels) + "," +
                     std::to_string(config_.input_side) + "," + std::to_string(config_.input_side) +
                     "] input, got " + shape_to_string(batch.shape()));
  }
  BasicTensor<T> x = batch;
  // The final softmax layer is applied separately so the logits stay
  // available for the fused loss gradient.
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) x = layers_[i]->forward(x, mode);
  logits_ = std::move(x);
  return layers_.back()->forward(logits_, mode);
}

template <typename T>
void Model<T>::backward_from_logits(const BasicTensor<T>& grad_logits) {
  if (grad_logits.shape() != logits_.shape()) {
    throw ShapeError("logit gradient " + shape_to_string(grad_logits.shape()) +
                     " does not match logits " + shape_to_string(logits_.shape()));
  }
  BasicTensor<T> g = grad_logits;
  for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& layer : layers_) layer->zero_grad();
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto ref : layers_[i]->parameters()) {
      ref.name = trace_[i].name + "." + ref.name;
      out.push_back(std::move(ref));
    }
  }
  return out;
}

template <typename T>
std::vector<NamedParam<T>> Model<T>::parameters() const {
  std::vector<NamedParam<T>> out;
  // Layer::parameters() only hands out pointers; nothing is modified here.
  for (const auto& ref : const_cast<Model*>(this)->parameters()) {
    out.push_back({ref.name, ref.value});
  }
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.value->size();
  return total;
}

template <typename T>
std::size_t Model<T>::flatten_dim() const {
  for (const auto& t : trace_) {
    if (t.kind == "flatten") return t.output[0];
  }
  return 0;
}

template <typename T>
std::uint64_t Model<T>::branch_hash() const {
  std::uint64_t h = kFnvOffsetBasis;
  for (const auto& layer : layers_) {
    const std::uint64_t part = layer->branch_hash();
    h = fnv1a(std::as_bytes(std::span<const std::uint64_t>(&part, 1)), h);
  }
  return h;
}

template class Model<float>;
template class Model<double>;

Model<float> build_model(const ModelConfig& config) { return Model<float>(config); }

Prediction predict(Model<float>& model, const Tensor& image) {
  if (image.rank() != 3) {
    throw ShapeError("predict expects a [c,h,w] image, got " + shape_to_string(image.shape()));
  }
  const Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  const Tensor probs = model.forward(batch, Mode::eval);
  Prediction out;
  out.class_index = argmax_rows(probs)[0];
  out.probs.assign(probs.data().begin(), probs.data().end());
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'S', 'G', 'L', 'Y'};

template <typename U>
void put(std::vector<std::byte>& out, U value) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::byte>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::span<const std::byte> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename U>
  U get(const char* what) {
    auto raw = take(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(raw[i])) << (8 * i);
    }
    return static_cast<U>(v);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

float float_from_le(std::span<const std::byte> raw) {
  std::uint32_t bits = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(std::to_integer<std::uint8_t>(raw[i])) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

std::vector<std::byte> encode_checkpoint(const Model<float>& model) {
  std::vector<std::byte> out;
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put<std::uint16_t>(out, kCheckpointVersion);
  const std::string text = model.config().to_text();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  for (char c : text) out.push_back(static_cast<std::byte>(c));

  std::uint64_t checksum = kFnvOffsetBasis;
  for (const auto& p : model.parameters()) {
    const Tensor& t = *p.value;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const std::size_t start = out.size();
    for (float v : t.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    checksum = fnv1a(std::span<const std::byte>(out).subspan(start), checksum);
  }
  put<std::uint64_t>(out, checksum);
  return out;
}

Model<float> decode_checkpoint(std::span<const std::byte> bytes) {
  Reader in(bytes);
  auto magic = in.take(4, "magic");
  for (std::size_t i = 0; i < 4; ++i) {
    if (magic[i] != static_cast<std::byte>(kMagic[i])) throw BadMagicError("not a checkpoint: bad magic bytes");
  }
  const auto version = in.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("unsupported checkpoint version " + std::to_string(version) +
                               " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto text_len = in.get<std::uint32_t>("config length");
  auto text_bytes = in.take(text_len, "config");
  const std::string text(reinterpret_cast<const char*>(text_bytes.data()), text_bytes.size());

  Model<float> model(ModelConfig::from_text(text));
  std::uint64_t checksum = kFnvOffsetBasis;
  for (auto& p : model.parameters()) {
    const auto rank = in.get<std::uint8_t>("parameter rank");
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint32_t>("parameter dims");
    if (shape != p.value->shape()) {
      throw CheckpointError("parameter " + p.name + " has shape " + shape_to_string(shape) +
                            ", config implies " + shape_to_string(p.value->shape()));
    }
    auto payload = in.take(4 * p.value->size(), "parameter payload");
    checksum = fnv1a(payload, checksum);
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      (*p.value)[i] = float_from_le(payload.subspan(4 * i, 4));
    }
  }
  const auto stored = in.get<std::uint64_t>("checksum");
  if (stored != checksum) throw ChecksumError("checkpoint checksum mismatch: payload is corrupted");
  if (in.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint checksum");
  return model;
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::as_bytes(std::span<const char>(raw)));
}

std::size_t checkpoint_size(const ModelConfig& config) {
  const auto trace = trace_shapes(config);
  std::size_t records = 0;
  for (const auto& layer : trace) {
    if (layer.kind == "conv") records += (1 + 4 * 4) + (1 + 4 * 1);
    if (layer.kind == "dense") records += (1 + 4 * 2) + (1 + 4 * 1);
  }
  return 4 + 2 + 4 + config.to_text().size() + records + 4 * count_parameters(config) + 8;
}

}  // namespace signglyph
