# Copyright (c) 2025, Clapgrow Software and contributors
# For license information, please see license.txt

from visual_mpc.commands import main

main()
