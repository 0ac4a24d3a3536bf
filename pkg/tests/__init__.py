# SPDX-FileCopyrightText: 2026 thema contributors
#
# SPDX-License-Identifier: GPL-3.0-or-later
#
