import csv
import io

UA = {
    "Internet Explorer": "Mozilla/5.0 (compatible; MSIE 10.0; Windows NT 6.1; Trident/6.0)",
    "Chrome": "Mozilla/5.0 AppleWebKit/537.36 (KHTML, like Gecko) Chrome/33.0 Safari/537.36",
    "Firefox": "Mozilla/5.0 (Windows NT 6.1; rv:27.0) Gecko/20100101 Firefox/27.0",
    "Opera": "Opera/9.80 (Windows NT 6.1) Presto/2.12.388 Version/12.16",
    "SeaMonkey": "Mozilla/5.0 (rv:25.0) Gecko/20100101 Firefox/25.0 SeaMonkey/2.22.1",
}


def log_line(user="u1", stamp="02/15/2014 09:00:00", rule="DEVICEIDCHECK",
             sig="Y", dev="YY", browser="Internet Explorer", log_id="L0",
             columns=42) -> str:
    fields = [log_id, user, stamp, rule, sig, dev, UA[browser]]
    fields += ["-"] * (columns - len(fields))
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow(fields)
    return buf.getvalue()
