"""Dynamic congestion games with crowdsourced hazard learning."""
