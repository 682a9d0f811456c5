// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef APN_SNAPSHOT_IO_HPP
#define APN_SNAPSHOT_IO_HPP

#include "apn/types.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace apn
{
    // Binary snapshot container, little-endian:
    //   "APND" | version u32 | M u32 | N u32 | M*N (re, im) float32 pairs, row-major.
    // Values are stored in single precision; a written file reads back to
    // the same float32 values bit for bit.
    inline constexpr std::uint32_t snapshot_format_version = 1;

    namespace detail
    {
        inline void put_u32(std::ostream &out, std::uint32_t v)
        {
            const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
            out.write(reinterpret_cast<const char *>(b), 4);
        }

        inline std::uint32_t get_u32(std::istream &in)
        {
            unsigned char b[4];
            if (!in.read(reinterpret_cast<char *>(b), 4))
                throw std::runtime_error("snapshot file: truncated header");
            return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
                   std::uint32_t(b[3]) << 24;
        }

        inline void put_f32(std::ostream &out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
    } // namespace detail

    inline void write_snapshots(std::ostream &out, const CMatd &Z)
    {
        out.write("APND", 4);
        detail::put_u32(out, snapshot_format_version);
        detail::put_u32(out, std::uint32_t(Z.rows()));
        detail::put_u32(out, std::uint32_t(Z.cols()));
        for (Eigen::Index m = 0; m < Z.rows(); ++m)
            for (Eigen::Index n = 0; n < Z.cols(); ++n)
            {
                detail::put_f32(out, float(Z(m, n).real()));
                detail::put_f32(out, float(Z(m, n).imag()));
            }
        if (!out)
            throw std::runtime_error("snapshot file: write failed");
    }

    inline CMatd read_snapshots(std::istream &in)
    {
        char magic[4];
        if (!in.read(magic, 4) || std::memcmp(magic, "APND", 4) != 0)
            throw std::runtime_error("snapshot file: bad magic");
        const std::uint32_t version = detail::get_u32(in);
        if (version != snapshot_format_version)
            throw std::runtime_error("snapshot file: unsupported version " + std::to_string(version));
        const std::uint32_t M = detail::get_u32(in);
        const std::uint32_t N = detail::get_u32(in);
        if (M == 0 || N == 0)
            throw std::runtime_error("snapshot file: empty matrix");
        CMatd Z(M, N);
        for (Eigen::Index m = 0; m < Z.rows(); ++m)
            for (Eigen::Index n = 0; n < Z.cols(); ++n)
            {
                const float re = std::bit_cast<float>(detail::get_u32(in));
                const float im = std::bit_cast<float>(detail::get_u32(in));
                Z(m, n) = {double(re), double(im)};
            }
        return Z;
    }

    // Text form: one line per sensor, 2N comma-separated numbers re_1, im_1, ...
    // Lines starting with '#' are skipped.
    inline void write_snapshots_text(std::ostream &out, const CMatd &Z)
    {
        out << std::setprecision(17);
        for (Eigen::Index m = 0; m < Z.rows(); ++m)
        {
            for (Eigen::Index n = 0; n < Z.cols(); ++n)
                out << (n ? "," : "") << Z(m, n).real() << ',' << Z(m, n).imag();
            out << '\n';
        }
    }

    inline CMatd read_snapshots_text(std::istream &in)
    {
        std::vector<std::vector<double>> rows;
        std::string line;
        while (std::getline(in, line))
        {
            if (line.empty() || line[0] == '#')
                continue;
            std::vector<double> v;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ','))
                v.push_back(std::stod(cell));
            if (v.empty() || v.size() % 2)
                throw std::runtime_error("snapshot text: each line needs an even, nonzero count of values");
            if (!rows.empty() && v.size() != rows.front().size())
                throw std::runtime_error("snapshot text: ragged lines");
            rows.push_back(std::move(v));
        }
        if (rows.empty())
            throw std::runtime_error("snapshot text: no data");
        const Eigen::Index M = Eigen::Index(rows.size());
        const Eigen::Index N = Eigen::Index(rows.front().size() / 2);
        CMatd Z(M, N);
        for (Eigen::Index m = 0; m < M; ++m)
            for (Eigen::Index n = 0; n < N; ++n)
                Z(m, n) = {rows[std::size_t(m)][std::size_t(2 * n)], rows[std::size_t(m)][std::size_t(2 * n + 1)]};
        return Z;
    }

    // Binary when the file starts with the magic, text otherwise.
    inline CMatd load_snapshots(const std::string &path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw std::runtime_error("cannot open snapshot file '" + path + "'");
        char magic[4] = {};
        in.read(magic, 4);
        const bool binary = in.gcount() == 4 && std::memcmp(magic, "APND", 4) == 0;
        in.clear();
        in.seekg(0);
        return binary ? read_snapshots(in) : read_snapshots_text(in);
    }

    inline void save_snapshots(const std::string &path, const CMatd &Z, bool text = false)
    {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw std::runtime_error("cannot write snapshot file '" + path + "'");
        if (text)
            write_snapshots_text(out, Z);
        else
            write_snapshots(out, Z);
    }
} // namespace apn

#endif // APN_SNAPSHOT_IO_HPP
