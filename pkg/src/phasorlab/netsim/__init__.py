from .packets import (
    NetPacket,
    Violation,
    build_arp,
    build_tcp_packet,
    finalize,
    ipv4_checksum,
    mac_bytes,
    mac_str,
    tcp_checksum,
    validate_packet,
)
from .pcap import BadPcapMagic, PcapReader, read_pcap, write_pcap
from .sim import (
    ConnReset,
    InterceptQueue,
    MutateAndAccept,
    Network,
    Node,
    NoSuchIp,
    StreamConn,
    Verdict,
    arp_reply,
    arp_request,
    attach_interceptor,
    deliver,
    ns,
    process_arp,
    send_stream,
    set_ip_forwarding,
)
